use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use iot_hub::bus::wire::{BusClient, BusServer, Request};
use iot_hub::bus::{Broker, FaultConfig, Qos, Topic};
use iot_hub::hub::{decode_observations, serve, tick_time, Hub, HubError, ScenarioConfig, Simulator, TICK_MS};
use iot_hub::object::DomainId;
use iot_hub::semantic::{Iri, Query};
use iot_hub::services::ServiceRequest;

#[derive(Parser)]
#[command(name = "hub", version, about = "Multi-domain IoT hub: scenarios, queries, services and the bus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Scenario JSON; the bundled default when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Ticks to simulate before acting; the scenario's duration when omitted.
    #[arg(long)]
    ticks: Option<u64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig, HubError> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::bundled(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.ticks {
            cfg.duration_ticks = t;
        }
        Ok(cfg)
    }

    /// Boots a hub and runs it for the configured number of ticks.
    fn hub(&self) -> Result<Hub, HubError> {
        let cfg = self.load()?;
        let ticks = cfg.duration_ticks;
        let hub = Hub::boot(cfg)?;
        hub.run_until(ticks)?;
        Ok(hub)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and print or write its report.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a query against the central store, or a domain's store.
    Query {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        domain: Option<String>,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Inspect registered objects.
    Objects {
        #[command(subcommand)]
        action: ObjectsAction,
    },
    /// Inspect microservice instances.
    Services {
        #[command(subcommand)]
        action: ServicesAction,
    },
    /// Submit one service request after the scenario has run.
    Request {
        #[arg(long)]
        capability: String,
        #[arg(long)]
        user: String,
        /// Request parameter as name=value; repeatable.
        #[arg(long = "param", value_parser = parse_param)]
        params: Vec<(String, Value)>,
        /// Resolve through a mashup even if one domain suffices.
        #[arg(long)]
        force_mashup: bool,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Serve the HTTP gateway.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Message bus operations.
    Bus {
        #[command(subcommand)]
        action: BusAction,
    },
    /// Run a scenario on observations from a remote bus instead of the
    /// built-in simulators; stops once the bus has been quiet for a while.
    Listen {
        #[arg(long)]
        bus: String,
        #[arg(long, default_value_t = 2000)]
        idle_ms: u64,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Run the device simulators against a remote bus.
    Simulate {
        #[arg(long)]
        bus: String,
        #[arg(long, default_value_t = 60)]
        ticks: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum ObjectsAction {
    List {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    Show {
        iri: String,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
}

#[derive(Subcommand)]
enum ServicesAction {
    List {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
}

#[derive(Subcommand)]
enum BusAction {
    /// Host a broker over TCP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7883")]
        addr: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        ack_drop: f64,
    },
}

fn parse_param(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s.split_once('=').ok_or("expected name=value")?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_owned()));
    Ok((k.to_owned(), value))
}

fn print(v: &Value) -> std::io::Result<()> {
    writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(v).expect("JSON values serialize"))
}

fn fail(e: impl std::fmt::Display) -> Box<dyn std::error::Error> {
    e.to_string().into()
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { scenario, report } => {
            let cfg = scenario.load()?;
            let text = Hub::boot(cfg)?.run()?.to_json();
            match report {
                Some(p) => std::fs::write(&p, text + "\n")?,
                None => writeln!(std::io::stdout().lock(), "{text}")?,
            }
        }
        Command::Query { file, domain, scenario } => {
            let q = Query::from_json(&std::fs::read_to_string(&file)?)?;
            let domain = domain.map(|d| DomainId::new(&d)).transpose()?;
            let hub = scenario.hub()?;
            let out = hub.query(&q, domain.as_ref())?;
            print(&json!({"status": out.status, "signature": out.signature, "results": out.bindings.to_json_value()}))?;
        }
        Command::Objects { action: ObjectsAction::List { scenario } } => {
            let hub = scenario.hub()?;
            let mut out = std::io::stdout().lock();
            for (scope, vo) in hub.objects() {
                writeln!(out, "{scope}\t{}\t{}", vo.id, vo.observed_property)?;
            }
        }
        Command::Objects { action: ObjectsAction::Show { iri, scenario } } => {
            let hub = scenario.hub()?;
            let reply = hub.handle("GET", &format!("/objects/{}", percent_path(&iri)), "");
            print(&reply.body)?;
            if reply.status != 200 {
                return Err(fail(format!("status {}", reply.status)));
            }
        }
        Command::Services { action: ServicesAction::List { scenario } } => {
            let hub = scenario.hub()?;
            let mut all = hub.services().descriptors();
            all.sort_by(|a, b| a.id.cmp(&b.id));
            let mut out = std::io::stdout().lock();
            for d in all {
                writeln!(out, "{}\t{}\t{}\tdepth={}", d.id, d.kind, d.state, d.load_queue_depth)?;
            }
        }
        Command::Request { capability, user, params, force_mashup, scenario } => {
            let hub = scenario.hub()?;
            let req = ServiceRequest {
                request_id: hub.next_request_id(),
                user_id: Iri::new(user)?,
                capability,
                params: params.into_iter().collect::<BTreeMap<_, _>>(),
                domains_hint: Default::default(),
            };
            print(&json!(hub.submit(&req, force_mashup)?))?;
        }
        Command::Serve { addr, scenario } => {
            let hub = Arc::new(scenario.hub()?);
            serve(hub, &addr)?;
        }
        Command::Bus { action: BusAction::Serve { addr, seed, ack_drop } } => {
            let broker = Arc::new(Broker::new(FaultConfig { seed, ack_drop, delivery_drop: 0.0 }));
            let server = BusServer::bind(&addr, broker)?;
            eprintln!("bus listening on {}", server.local_addr()?);
            server.run()?;
        }
        Command::Listen { bus, idle_ms, report, scenario } => {
            let text = listen(&bus, Duration::from_millis(idle_ms), scenario.load()?)?;
            match report {
                Some(p) => std::fs::write(&p, text + "\n")?,
                None => writeln!(std::io::stdout().lock(), "{text}")?,
            }
        }
        Command::Simulate { bus, ticks, seed } => {
            let mut client = BusClient::connect(&bus, "simulators")?;
            let mut cfg = ScenarioConfig::quiet(seed, ticks);
            cfg.requests.clear();
            let mut sim = Simulator::new(&cfg);
            let mut sent = 0u64;
            for tick in 0..ticks {
                for e in sim.step(tick) {
                    client.publish(&e.topic.to_string(), &e.payload, Qos::AtLeastOnce)?;
                    sent += 1;
                }
                client.call(&Request::Advance { ms: TICK_MS as u64 })?;
            }
            eprintln!("published {sent} observations up to {}", tick_time(ticks));
        }
    }
    Ok(())
}

/// Feeds remote observations to a hub tick by tick, by observation time.
fn listen(bus: &str, idle: Duration, cfg: ScenarioConfig) -> Result<String, Box<dyn std::error::Error>> {
    let hub = Hub::boot(cfg)?;
    let mut client = BusClient::connect(bus, "hub")?;
    client.subscribe("obs/#", Qos::AtLeastOnce)?;
    eprintln!("subscribed to obs/# on {bus}");
    let mut pending: BTreeMap<u64, Vec<(Topic, Vec<u8>)>> = BTreeMap::new();
    let mut last = Instant::now();
    loop {
        let batch = client.poll()?;
        if batch.is_empty() {
            if last.elapsed() >= idle {
                break;
            }
            std::thread::sleep(Duration::from_millis(20));
            continue;
        }
        last = Instant::now();
        for d in batch {
            client.ack(d.delivery_id)?;
            let Some(domain) = d.message.topic.segments().get(1).and_then(|s| DomainId::new(s).ok()) else {
                continue;
            };
            let Some(t) = decode_observations(&domain, &d.message.payload).ok().and_then(|o| o.first().map(|o| o.timestamp))
            else {
                log::warn!("undecodable payload on {}", d.message.topic);
                continue;
            };
            let tick = ((t - tick_time(0)) / TICK_MS).max(0) as u64;
            pending.entry(tick).or_default().push((d.message.topic, d.message.payload));
        }
        // A tick is complete once a later one has started arriving.
        let newest = pending.keys().next_back().copied().unwrap_or(0);
        while hub.ticks() < newest {
            hub.step_external(pending.remove(&hub.ticks()).unwrap_or_default())?;
        }
    }
    while let Some(&last_tick) = pending.keys().next_back() {
        if hub.ticks() > last_tick {
            break;
        }
        hub.step_external(pending.remove(&hub.ticks()).unwrap_or_default())?;
    }
    Ok(hub.report().to_json())
}

fn percent_path(s: &str) -> String {
    percent_encoding::utf8_percent_encode(s, percent_encoding::NON_ALPHANUMERIC).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
