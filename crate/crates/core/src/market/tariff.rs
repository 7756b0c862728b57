use serde::{Deserialize, Serialize};

use super::MarketError;

/// Utility tariffs and grid fees, all in milli-cents per kWh.
///
/// Local trades only pay the low-voltage grid fee; energy bought from the
/// utility pays the fee for every voltage level it crossed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TariffConfig {
    /// Price the utility pays for surplus energy.
    pub feed_in_mct: u64,
    /// Energy price the utility charges.
    pub retail_energy_mct: u64,
    /// Grid cost of the local voltage level only.
    pub grid_fee_local_mct: u64,
    /// Grid cost accumulated over all voltage levels.
    pub grid_fee_full_mct: u64,
}

impl TariffConfig {
    pub const fn new(feed_in_mct: u64, retail_energy_mct: u64, grid_fee_local_mct: u64, grid_fee_full_mct: u64) -> Self {
        Self {
            feed_in_mct,
            retail_energy_mct,
            grid_fee_local_mct,
            grid_fee_full_mct,
        }
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        if self.feed_in_mct > self.retail_energy_mct {
            return Err(MarketError::InvalidTariff("feed_in_mct exceeds retail_energy_mct"));
        }
        if self.grid_fee_local_mct > self.grid_fee_full_mct {
            return Err(MarketError::InvalidTariff("grid_fee_local_mct exceeds grid_fee_full_mct"));
        }
        Ok(())
    }

    /// Lowest sensible limit price; the utility always buys at this.
    pub fn floor(&self) -> u64 {
        self.feed_in_mct
    }

    /// Highest sensible limit price; the utility always sells at this.
    pub fn ceiling(&self) -> u64 {
        self.retail_energy_mct
    }

    pub fn clamp(&self, limit_mct: u64) -> u64 {
        limit_mct.clamp(self.floor(), self.ceiling())
    }
}

impl Default for TariffConfig {
    /// Illustrative reference values, not measured data.
    fn default() -> Self {
        Self::new(4000, 8000, 5000, 10000)
    }
}
