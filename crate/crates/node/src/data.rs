//! Chain data on disk and the household roster the KPI endpoints need.
//!
//! A chain directory holds `genesis.json` and `chain.log`, and optionally
//! `households.json` and `profiles.csv`. `gridmarket simulate` writes this
//! layout and a node's data directory follows it.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use gridmarket_core::consensus::CommitCertificate;
use gridmarket_core::explorer::ChainStore;
use gridmarket_core::identity::{from_canonical, to_canonical, Address, SignatureVerifier};
use gridmarket_core::ledger::log::decode_line;
use gridmarket_core::ledger::{Block, Genesis};
use gridmarket_core::metering::{load_profiles, HouseholdProfile};
use gridmarket_core::sim::HouseholdRecord;

use crate::NodeError;

/// Committed chain shared between the consensus loop and HTTP readers.
pub type SharedChain = Arc<RwLock<ChainStore>>;

pub const GENESIS_FILE: &str = "genesis.json";
pub const CHAIN_LOG: &str = "chain.log";
pub const COMMITS_LOG: &str = "commits.log";
pub const HOUSEHOLDS_FILE: &str = "households.json";
pub const PROFILES_FILE: &str = "profiles.csv";

/// Meter profiles by account.
#[derive(Debug, Clone, Default)]
pub struct Roster {
    profiles: BTreeMap<Address, HouseholdProfile>,
}

impl Roster {
    /// Pair household records with their profiles by household id. Kind and
    /// capacities come from the records, since the CSV does not carry them.
    pub fn new(households: &[HouseholdRecord], profiles: Vec<HouseholdProfile>) -> Result<Self, NodeError> {
        let mut by_id: BTreeMap<String, HouseholdProfile> =
            profiles.into_iter().map(|p| (p.household_id.clone(), p)).collect();
        let mut roster = Self::default();
        for h in households {
            let Some(mut p) = by_id.remove(&h.id) else {
                return Err(NodeError::Roster(format!("no profile for household {:?}", h.id)));
            };
            p.kind = h.kind;
            p.pv_kwp = h.pv_kwp;
            p.battery_kwh = h.battery_kwh;
            roster.insert(h.address, p);
        }
        Ok(roster)
    }

    pub fn load(households: &Path, profiles: &Path, interval_seconds: u64) -> Result<Self, NodeError> {
        let text = std::fs::read_to_string(households).map_err(|e| NodeError::io(households, e))?;
        let records: Vec<HouseholdRecord> = serde_json::from_str(&text)
            .map_err(|e| NodeError::Roster(format!("{}: {e}", households.display())))?;
        Self::new(&records, load_profiles(profiles, interval_seconds)?)
    }

    pub fn insert(&mut self, account: Address, profile: HouseholdProfile) {
        self.profiles.insert(account, profile);
    }

    pub fn profile(&self, account: &Address) -> Option<&HouseholdProfile> {
        self.profiles.get(account)
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }
}

/// Reads `chain.log` incrementally. Only newline-terminated lines count, so
/// a block being written is picked up on a later poll.
#[derive(Debug)]
pub struct LogFollower {
    path: PathBuf,
    offset: u64,
    line: usize,
}

impl LogFollower {
    pub fn new(path: &Path) -> Self {
        Self {
            path: path.to_path_buf(),
            offset: 0,
            line: 0,
        }
    }

    /// Blocks appended since the last call. A missing file reads as empty.
    pub fn poll(&mut self) -> Result<Vec<Block>, NodeError> {
        let mut file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(NodeError::io(&self.path, e)),
        };
        let mut buf = Vec::new();
        file.seek(SeekFrom::Start(self.offset))
            .and_then(|_| file.read_to_end(&mut buf))
            .map_err(|e| NodeError::io(&self.path, e))?;
        let Some(end) = buf.iter().rposition(|&b| b == b'\n') else {
            return Ok(Vec::new());
        };
        let text = std::str::from_utf8(&buf[..end]).map_err(|e| self.bad_line(self.line + 1, e.to_string()))?;
        let mut blocks = Vec::new();
        for raw in text.split('\n') {
            self.line += 1;
            if raw.trim().is_empty() {
                continue;
            }
            blocks.push(decode_line(raw).map_err(|reason| self.bad_line(self.line, reason))?);
        }
        self.offset += end as u64 + 1;
        Ok(blocks)
    }

    fn bad_line(&self, line: usize, reason: String) -> NodeError {
        NodeError::Ledger(gridmarket_core::ledger::LedgerError::Log { line, reason })
    }
}

/// Everything the explorer serves from a chain directory.
pub struct ChainDir {
    pub chain: ChainStore,
    pub roster: Roster,
    pub follower: LogFollower,
}

impl ChainDir {
    /// Load and verify. `households.json` and `profiles.csv` are optional,
    /// but one without the other is an error.
    pub fn open(dir: &Path, verifier: &dyn SignatureVerifier) -> Result<Self, NodeError> {
        let genesis = Genesis::load(&dir.join(GENESIS_FILE))?;
        let log = dir.join(CHAIN_LOG);
        if !log.exists() {
            return Err(NodeError::io(&log, std::io::ErrorKind::NotFound.into()));
        }
        let mut follower = LogFollower::new(&log);
        let blocks = follower.poll()?;
        let interval_seconds = genesis.interval_seconds;
        let chain = ChainStore::replay(genesis, blocks, verifier)?;
        let (h, p) = (dir.join(HOUSEHOLDS_FILE), dir.join(PROFILES_FILE));
        let roster = match (h.exists(), p.exists()) {
            (true, true) => Roster::load(&h, &p, interval_seconds)?,
            (false, false) => Roster::default(),
            (true, false) => return Err(NodeError::Roster(format!("{} has no {PROFILES_FILE}", dir.display()))),
            (false, true) => return Err(NodeError::Roster(format!("{} has no {HOUSEHOLDS_FILE}", dir.display()))),
        };
        Ok(Self { chain, roster, follower })
    }
}

/// Commit certificates, one hex-wrapped canonical certificate per line.
/// Lets a restarted node serve sync requests for its whole chain.
#[derive(Debug)]
pub struct CommitLog {
    path: PathBuf,
    file: File,
}

impl CommitLog {
    pub fn open(path: &Path) -> Result<Self, NodeError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| NodeError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, cert: &CommitCertificate) -> Result<(), NodeError> {
        let mut line = hex::encode(to_canonical(cert).expect("certificate is canonical"));
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| NodeError::io(&self.path, e))
    }

    /// Certificates whose block matches `blocks`, by height. Lines that do
    /// not decode or match are skipped; they can only come from a crash
    /// mid-write or a chain.log replaced by hand.
    pub fn read_matching(path: &Path, blocks: &[Block]) -> Result<BTreeMap<u64, CommitCertificate>, NodeError> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
            Err(e) => return Err(NodeError::io(path, e)),
        };
        let mut out = BTreeMap::new();
        for line in text.lines() {
            let Some(cert) = hex::decode(line.trim())
                .ok()
                .and_then(|raw| from_canonical::<CommitCertificate>(&raw).ok())
            else {
                continue;
            };
            let h = cert.height();
            if h >= 1 && blocks.get(h as usize - 1) == Some(&cert.block) {
                out.insert(h, cert);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn follower_waits_for_complete_lines() {
        use gridmarket_core::sim::{run_scenario, Scenario, SimOptions};
        let dir = tempfile::tempdir().unwrap();
        let scenario = Scenario::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/toy.json")).unwrap();
        let o = run_scenario(&scenario, &SimOptions::new(2, 3)).unwrap();
        let path = dir.path().join(CHAIN_LOG);
        let lines: Vec<String> = o.chain.blocks().iter().map(gridmarket_core::ledger::log::encode_line).collect();
        assert!(lines.len() >= 3);

        let mut f = LogFollower::new(&path);
        assert!(f.poll().unwrap().is_empty());
        let mut file = File::create(&path).unwrap();
        write!(file, "{}\n{}", lines[0], &lines[1][..10]).unwrap();
        assert_eq!(f.poll().unwrap(), vec![o.chain.blocks()[0].clone()]);
        write!(file, "{}\n\n{}\n", &lines[1][10..], lines[2]).unwrap();
        assert_eq!(f.poll().unwrap(), o.chain.blocks()[1..3].to_vec());
        assert!(f.poll().unwrap().is_empty());

        writeln!(file, "zz").unwrap();
        let e = f.poll().unwrap_err().to_string();
        assert!(e.contains("line 5"), "{e}");
    }
}
