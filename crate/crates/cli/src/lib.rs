//! Command implementations behind the `bolaz` binary.

pub mod serve;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use bolaz_core::classify::Role;
use bolaz_core::harness::{self, HarnessError, ReplayReport, Scenario};
use bolaz_core::msg::{AuthzPolicy, MsgError};
use bolaz_core::runtime::{CacheConfig, Enforcer, IdCache};
use bolaz_core::store::InMemoryStore;
use bolaz_core::taint::facts_from_jsonl;
use bolaz_core::{analyze, load_app, AppModel, Classification, Finding};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Process exit codes.
pub mod exit {
    pub const CLEAN: u8 = 0;
    pub const FINDINGS: u8 = 1;
    pub const INPUT: u8 = 2;
    pub const INTERNAL: u8 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Input {
        path: PathBuf,
        source: bolaz_core::Error,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] bolaz_core::Error),
    #[error("server: {0}")]
    Serve(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use bolaz_core::Error as E;
        match self {
            CliError::Read { .. } | CliError::Invalid(_) | CliError::Input { .. } => exit::INPUT,
            CliError::Write { .. } | CliError::Serve(_) => exit::INTERNAL,
            CliError::Core(e) => match e {
                E::Schema(_) | E::Sql(_) | E::App(_) | E::Taint(_) | E::Msg(_) => exit::INPUT,
                E::Harness(HarnessError::Store(_) | HarnessError::Authz(_)) => exit::INTERNAL,
                E::Harness(_) => exit::INPUT,
                E::Store(_) | E::Authz(_) => exit::INTERNAL,
            },
        }
    }
}

/// An input file read once, so its hash and contents agree.
pub struct InputFile {
    pub path: PathBuf,
    pub text: String,
}

impl InputFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(InputFile {
            path: path.to_path_buf(),
            text,
        })
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }

    fn input_err(&self, e: impl Into<bolaz_core::Error>) -> CliError {
        CliError::Input {
            path: self.path.clone(),
            source: e.into(),
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    std::fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes JSON to `path`, or to stdout when there is none. A closed stdout
/// is not an error.
pub fn emit(path: Option<&Path>, value: &impl Serialize) -> Result<(), CliError> {
    use std::io::Write;
    match path {
        Some(p) => write_json(p, value),
        None => {
            let text = serde_json::to_string_pretty(value).expect("report serializes");
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Write {
                    path: PathBuf::from("<stdout>"),
                    source: e,
                }),
                _ => Ok(()),
            }
        }
    }
}

/// Content hashes of the inputs a report was computed from, by role.
pub type Inputs = BTreeMap<&'static str, String>;

fn inputs(files: &[(&'static str, Option<&InputFile>)]) -> Inputs {
    files
        .iter()
        .filter_map(|(role, f)| f.map(|f| (*role, f.sha256())))
        .collect()
}

pub fn load_model(app: &InputFile) -> Result<AppModel, CliError> {
    load_app(&app.text).map_err(|e| app.input_err(e))
}

/// Reads a policy and checks that it only names endpoints of `model`.
pub fn load_policy(file: &InputFile, model: &AppModel) -> Result<AuthzPolicy, CliError> {
    let policy = AuthzPolicy::from_json(&file.text).map_err(|e| file.input_err(e))?;
    if let Some(p) = policy
        .points()
        .find(|p| model.endpoint(&p.endpoint).is_none())
    {
        return Err(file.input_err(MsgError::Parse(format!(
            "policy guards `{}`, which the app does not define",
            p.endpoint
        ))));
    }
    Ok(policy)
}

fn fixture_store(model: &AppModel) -> Result<InMemoryStore, CliError> {
    match model.fixture() {
        Some(f) => Ok(InMemoryStore::from_fixture(model.schema().clone(), f)
            .map_err(bolaz_core::Error::from)?),
        None => Ok(InMemoryStore::new(model.schema().clone())),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub producers: usize,
    pub consumers: usize,
    pub false_producers: usize,
    pub producer_consumers: usize,
    pub neither: usize,
    pub restricted_points: usize,
    pub unrestricted_points: usize,
    pub unassociated_points: usize,
}

impl Summary {
    fn of(classes: &[Classification], policy: &AuthzPolicy) -> Self {
        let count = |r: Role| classes.iter().filter(|c| c.role == r).count();
        Summary {
            producers: count(Role::Producer),
            consumers: count(Role::Consumer),
            false_producers: count(Role::FalseProducer),
            producer_consumers: count(Role::ProducerConsumer),
            neither: count(Role::Neither),
            restricted_points: policy.restricted_sets().count(),
            unrestricted_points: policy.sets.iter().filter(|s| s.unrestricted).count(),
            unassociated_points: policy.unassociated_points.len(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct AnalysisReport {
    pub format: &'static str,
    pub tool_version: &'static str,
    pub inputs: Inputs,
    pub summary: Summary,
    pub classifications: Vec<Classification>,
}

pub struct AnalyzeArgs<'a> {
    pub app: &'a Path,
    pub facts: Option<&'a Path>,
    pub policy_out: &'a Path,
    pub report_out: &'a Path,
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<Summary, CliError> {
    let app = InputFile::read(args.app)?;
    let model = load_model(&app)?;
    let facts_file = args.facts.map(InputFile::read).transpose()?;
    let facts = facts_file
        .as_ref()
        .map(|f| facts_from_jsonl(&f.text).map_err(|e| f.input_err(e)))
        .transpose()?;
    let analysis = match (analyze(&model, facts), &facts_file) {
        (Err(bolaz_core::Error::Taint(e)), Some(f)) => return Err(f.input_err(e)),
        (Err(e), _) => return Err(app.input_err(e)),
        (Ok(a), _) => a,
    };
    let summary = Summary::of(&analysis.classifications, &analysis.policy);
    for d in &analysis.policy.diagnostics {
        eprintln!("warning: {d}");
    }
    write_json(args.policy_out, &analysis.policy)?;
    write_json(
        args.report_out,
        &AnalysisReport {
            format: "bolaz-analysis/1",
            tool_version: TOOL_VERSION,
            inputs: inputs(&[("app", Some(&app)), ("facts", facts_file.as_ref())]),
            summary: summary.clone(),
            classifications: analysis.classifications,
        },
    )?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct FindingsReport {
    pub format: &'static str,
    pub tool_version: &'static str,
    pub inputs: Inputs,
    pub seed: u64,
    pub findings: Vec<Finding>,
}

pub struct ScanArgs<'a> {
    pub app: &'a Path,
    pub policy: Option<&'a Path>,
    pub findings_out: Option<&'a Path>,
    pub seed: u64,
}

/// Returns the number of confirmed findings.
pub fn cmd_scan(args: &ScanArgs) -> Result<usize, CliError> {
    let app = InputFile::read(args.app)?;
    let model = load_model(&app)?;
    let policy_file = args.policy.map(InputFile::read).transpose()?;
    let policy = match &policy_file {
        Some(f) => load_policy(f, &model)?,
        None => analyze(&model, None).map_err(|e| app.input_err(e))?.policy,
    };
    let store = fixture_store(&model)?;
    let findings =
        harness::scan(&model, &policy, &store, args.seed).map_err(bolaz_core::Error::from)?;
    let confirmed = findings.iter().filter(|f| f.confirmed).count();
    emit(
        args.findings_out,
        &FindingsReport {
            format: "bolaz-findings/1",
            tool_version: TOOL_VERSION,
            inputs: inputs(&[("app", Some(&app)), ("policy", policy_file.as_ref())]),
            seed: args.seed,
            findings,
        },
    )?;
    Ok(confirmed)
}

#[derive(Debug, Serialize)]
pub struct EnforceReport {
    pub format: &'static str,
    pub tool_version: &'static str,
    pub inputs: Inputs,
    pub replay: ReplayReport,
}

pub struct EnforceArgs<'a> {
    pub app: &'a Path,
    pub policy: &'a Path,
    pub ttl: Duration,
    pub cache_capacity: usize,
}

/// The app, policy and an enforcer over a fixture-seeded store.
pub struct Loaded {
    pub app: InputFile,
    pub policy_file: InputFile,
    pub model: AppModel,
    pub enforcer: Enforcer,
    pub store: InMemoryStore,
}

pub fn load_enforcement(args: &EnforceArgs) -> Result<Loaded, CliError> {
    if args.ttl.is_zero() {
        return Err(CliError::Invalid("--ttl must be positive".into()));
    }
    let app = InputFile::read(args.app)?;
    let model = load_model(&app)?;
    let policy_file = InputFile::read(args.policy)?;
    let policy = load_policy(&policy_file, &model)?;
    let cache = IdCache::new(CacheConfig {
        ttl: args.ttl,
        capacity: args.cache_capacity,
    });
    let enforcer = Enforcer::new(policy, model.schema().clone(), cache);
    let store = fixture_store(&model)?;
    Ok(Loaded {
        app,
        policy_file,
        model,
        enforcer,
        store,
    })
}

pub fn cmd_replay(
    args: &EnforceArgs,
    scenario: &Path,
    stress: bool,
    report_out: Option<&Path>,
) -> Result<(), CliError> {
    let loaded = load_enforcement(args)?;
    let scenario_file = InputFile::read(scenario)?;
    let sc = Scenario::from_json(&scenario_file.text).map_err(|e| scenario_file.input_err(e))?;
    let run = if stress {
        harness::stress_replay
    } else {
        harness::enforce_and_replay
    };
    let replay = run(&loaded.model, &loaded.enforcer, &loaded.store, &sc).map_err(|e| match e {
        HarnessError::DanglingReference(_) => scenario_file.input_err(e),
        e => CliError::Core(e.into()),
    })?;
    emit(
        report_out,
        &EnforceReport {
            format: "bolaz-enforce/1",
            tool_version: TOOL_VERSION,
            inputs: inputs(&[
                ("app", Some(&loaded.app)),
                ("policy", Some(&loaded.policy_file)),
                ("scenario", Some(&scenario_file)),
            ]),
            replay,
        },
    )
}
