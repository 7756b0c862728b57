//! Per-household bidding: price preferences, order composition and the
//! match-probability estimate shown next to the sliders.

mod preferences;
mod probability;

pub use preferences::{PreferenceStore, PreferenceUpdate, PricePreferences};
pub use probability::{estimate_match_probability, MatchEstimate, HISTORY_INTERVALS};

use crate::identity::KeyPair;
use crate::ledger::{OrderPayload, Payload, Transaction};
use crate::market::{TariffConfig, MAX_ORDER_WH};
use crate::metering::{net_position, MeterReading, NetPosition};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AgentError {
    #[error("household has a surplus but no sell limit; consumers cannot sell")]
    ConsumerCannotSell,
    #[error("reading is for interval {reading}, order requested for {requested}")]
    WrongInterval { reading: u64, requested: u64 },
    #[error("key does not belong to the preference owner")]
    WrongAccount,
    #[error("net position of {0} Wh exceeds the order size limit")]
    Oversized(u64),
    #[error("consumers cannot set a sell limit")]
    SellLimitForConsumer,
    #[error("unknown account")]
    UnknownAccount,
    #[error("signature does not verify for this account")]
    BadSignature,
    #[error("update is not newer than the stored preferences ({stored} >= {got})")]
    StaleUpdate { stored: u64, got: u64 },
}

/// Clip both limits into `[feed_in, retail]`.
pub fn clamp_limits(raw_buy: u64, raw_sell: Option<u64>, tariff: &TariffConfig) -> (u64, Option<u64>) {
    (tariff.clamp(raw_buy), raw_sell.map(|s| tariff.clamp(s)))
}

/// Turn one interval's meter reading into at most one signed order.
pub fn compose_order(
    prefs: &PricePreferences,
    reading: &MeterReading,
    interval_id: u64,
    nonce: u64,
    keypair: &KeyPair,
) -> Result<Option<Transaction>, AgentError> {
    if reading.interval_id != interval_id {
        return Err(AgentError::WrongInterval {
            reading: reading.interval_id,
            requested: interval_id,
        });
    }
    if keypair.address() != prefs.account {
        return Err(AgentError::WrongAccount);
    }
    let position = net_position(reading);
    let (side, limit) = match position {
        NetPosition::Balanced => return Ok(None),
        NetPosition::Buy(_) => (crate::market::Side::Buy, prefs.max_buy_mct),
        NetPosition::Sell(_) => (
            crate::market::Side::Sell,
            prefs.min_sell_mct.ok_or(AgentError::ConsumerCannotSell)?,
        ),
    };
    let energy_wh = position.energy_wh();
    if energy_wh > MAX_ORDER_WH {
        return Err(AgentError::Oversized(energy_wh));
    }
    let payload = Payload::Order(OrderPayload {
        side,
        energy_wh,
        limit_price_mct: limit,
        interval_id,
    });
    Ok(Some(Transaction::new_signed(keypair, payload, nonce)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::Side;
    use crate::metering::HouseholdKind;

    fn reading(c: u64, p: u64, b: i64) -> MeterReading {
        MeterReading {
            household_id: "h".into(),
            interval_id: 9,
            consumption_wh: c,
            production_wh: p,
            battery_wh: b,
        }
    }

    #[test]
    fn clamp_examples() {
        let t = TariffConfig::default();
        assert_eq!(clamp_limits(12_000, Some(1000), &t), (8000, Some(4000)));
        assert_eq!(clamp_limits(6000, Some(5000), &t), (6000, Some(5000)));
        assert_eq!(clamp_limits(6000, None, &t), (6000, None));
    }

    #[test]
    fn compose_examples() {
        let t = TariffConfig::default();
        let kp = KeyPair::from_label("agent");
        let prosumer = PricePreferences::passive(kp.address(), HouseholdKind::Prosumer, &t, 0);

        let tx = compose_order(&prosumer, &reading(500, 2000, 300), 9, 1, &kp).unwrap().unwrap();
        let o = tx.order();
        assert_eq!((o.side, o.energy_wh, o.limit_price_mct, o.interval_id), (Side::Sell, 1200, 4000, 9));
        assert!(crate::identity::verify_bytes(&tx.sender_pubkey, &tx.signing_bytes(), &tx.signature));
        assert_eq!(tx.nonce, 1);

        let tx = compose_order(&prosumer, &reading(500, 0, 0), 9, 2, &kp).unwrap().unwrap();
        assert_eq!((tx.order().side, tx.order().energy_wh, tx.order().limit_price_mct), (Side::Buy, 500, 8000));

        assert_eq!(compose_order(&prosumer, &reading(800, 500, -300), 9, 3, &kp), Ok(None));
    }

    #[test]
    fn compose_errors() {
        let t = TariffConfig::default();
        let kp = KeyPair::from_label("agent");
        let consumer = PricePreferences::passive(kp.address(), HouseholdKind::Consumer, &t, 0);
        assert_eq!(
            compose_order(&consumer, &reading(0, 100, 0), 9, 1, &kp),
            Err(AgentError::ConsumerCannotSell)
        );
        assert!(matches!(
            compose_order(&consumer, &reading(10, 0, 0), 10, 1, &kp),
            Err(AgentError::WrongInterval { .. })
        ));
        let other = KeyPair::from_label("other");
        assert_eq!(compose_order(&consumer, &reading(10, 0, 0), 9, 1, &other), Err(AgentError::WrongAccount));
        assert_eq!(
            compose_order(&consumer, &reading(MAX_ORDER_WH + 1, 0, 0), 9, 1, &kp),
            Err(AgentError::Oversized(MAX_ORDER_WH + 1))
        );
    }
}
