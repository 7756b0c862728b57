use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use gridmarket_core::consensus::{Validator, ValidatorSet};
use gridmarket_core::identity::{derive_address, generate_keypair, Address, PublicKey};
use gridmarket_core::ledger::{Genesis, GenesisAccount, DEFAULT_INTERVAL_SECONDS};
use gridmarket_core::market::TariffConfig;
use gridmarket_core::metering::{format_timestamp, parse_timestamp};
use gridmarket_core::sim::{run_scenario, Scenario, SimOptions};
use gridmarket_node::keyfile::write_key;
use gridmarket_node::runtime::{start_explorer, Listeners};
use gridmarket_node::Config;
use tokio::net::TcpListener;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "gridmarket", version, about = "Local peer-to-peer energy market")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a new secp256k1 key file.
    Keygen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a genesis file for a live network.
    Genesis {
        #[arg(long)]
        chain_id: String,
        /// Validator public key (hex). Repeat for each validator.
        #[arg(long = "validator", required = true)]
        validators: Vec<PublicKey>,
        /// Household account address. Repeat for each household.
        #[arg(long = "account")]
        accounts: Vec<Address>,
        #[arg(long, default_value_t = DEFAULT_INTERVAL_SECONDS)]
        interval_seconds: u64,
        /// ISO-8601 UTC, aligned to the interval. Defaults to the start of the
        /// current interval.
        #[arg(long)]
        genesis_time: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a live node until interrupted.
    Node {
        #[arg(long)]
        config: PathBuf,
        /// Take part in consensus regardless of the config file.
        #[arg(long)]
        validator: bool,
    },
    /// Run a scenario on the simulated network and write its report.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        intervals: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the explorer API over a chain directory or its chain.log.
    Explorer {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        chain: PathBuf,
        /// How often to look for new blocks, in milliseconds.
        #[arg(long, default_value_t = 1000)]
        poll_ms: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Keygen { out } => keygen(&out),
        Command::Genesis {
            chain_id,
            validators,
            accounts,
            interval_seconds,
            genesis_time,
            out,
        } => genesis(chain_id, validators, accounts, interval_seconds, genesis_time.as_deref(), &out),
        Command::Node { config, validator } => runtime().and_then(|rt| rt.block_on(node(&config, validator))),
        Command::Simulate {
            scenario,
            intervals,
            seed,
            out,
        } => simulate(&scenario, intervals, seed, &out),
        Command::Explorer {
            port,
            host,
            chain,
            poll_ms,
        } => runtime().and_then(|rt| rt.block_on(explorer(SocketAddr::new(host, port), &chain, poll_ms))),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().context("starting the async runtime")
}

fn keygen(out: &Path) -> Result<ExitCode> {
    let k = generate_keypair(None);
    write_key(out, &k)?;
    println!("address    {}", k.address());
    println!("public_key {}", k.public_key());
    Ok(ExitCode::SUCCESS)
}

fn genesis(
    chain_id: String,
    validators: Vec<PublicKey>,
    accounts: Vec<Address>,
    interval_seconds: u64,
    genesis_time: Option<&str>,
    out: &Path,
) -> Result<ExitCode> {
    if interval_seconds == 0 {
        bail!("--interval-seconds must be positive");
    }
    let genesis_time = match genesis_time {
        Some(t) => parse_timestamp(t).map_err(anyhow::Error::msg).context("--genesis-time")?,
        None => {
            let now = SystemTime::now().duration_since(UNIX_EPOCH)?.as_secs();
            now / interval_seconds * interval_seconds
        }
    };
    if genesis_time % interval_seconds != 0 {
        bail!("--genesis-time {} is not aligned to {interval_seconds} s", format_timestamp(genesis_time));
    }
    let validators = validators
        .into_iter()
        .map(|pubkey| {
            derive_address(&pubkey)
                .map(|address| Validator { address, pubkey })
                .with_context(|| format!("validator {pubkey}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let g = Genesis {
        chain_id,
        genesis_time,
        interval_seconds,
        tariff: TariffConfig::default(),
        accounts: accounts
            .into_iter()
            .map(|address| GenesisAccount { address, balance_uct: 0 })
            .collect(),
        validators: ValidatorSet::new(validators)?,
    };
    g.validate()?;
    if out.exists() {
        bail!("{} already exists", out.display());
    }
    g.save(out)?;
    println!("genesis {} ({})", g.hash(), format_timestamp(genesis_time));
    Ok(ExitCode::SUCCESS)
}

async fn node(path: &Path, validator: bool) -> Result<ExitCode> {
    let mut config = Config::load(path)?;
    config.node.validator |= validator;
    let listeners = Listeners::bind(&config).await?;
    let handle = gridmarket_node::start(config, listeners).await?;
    let stopped = handle.stopped();
    tokio::select! {
        r = tokio::signal::ctrl_c() => r.context("waiting for ctrl-c")?,
        _ = stopped.cancelled() => {}
    }
    let failed = stopped.is_cancelled();
    tracing::info!(height = handle.height(), "shutting down");
    handle.shutdown().await;
    if failed {
        bail!("node stopped after a fatal error; see the log above");
    }
    Ok(ExitCode::SUCCESS)
}

fn simulate(scenario: &Path, intervals: u64, seed: u64, out: &Path) -> Result<ExitCode> {
    let s = Scenario::load(scenario)?;
    let o = run_scenario(&s, &SimOptions::new(intervals, seed))?;
    o.write_to(out)?;
    let r = &o.report;
    println!(
        "{}: {}/{} intervals cleared, height {}, state {}",
        r.scenario, r.intervals_cleared, r.intervals_requested, r.final_height, r.final_state_hash
    );
    for inv in &r.invariants {
        let verdict = if inv.passed() { "ok" } else { "FAILED" };
        println!("  {:<32} {verdict} ({} checks, {} violations)", inv.name, inv.checked, inv.violations);
        for ex in &inv.examples {
            println!("    {ex}");
        }
    }
    println!("report written to {}", out.display());
    Ok(if o.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

async fn explorer(addr: SocketAddr, chain: &Path, poll_ms: u64) -> Result<ExitCode> {
    let dir = if chain.is_file() { chain.parent().unwrap_or(Path::new(".")) } else { chain };
    let listener = TcpListener::bind(addr).await.with_context(|| format!("listening on {addr}"))?;
    let handle = start_explorer(dir, listener, Duration::from_millis(poll_ms.max(1)))?;
    println!("explorer listening on http://{}", handle.http_addr);
    tokio::signal::ctrl_c().await.context("waiting for ctrl-c")?;
    handle.shutdown().await;
    Ok(ExitCode::SUCCESS)
}
