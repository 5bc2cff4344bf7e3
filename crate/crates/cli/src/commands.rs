use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use feaflow_core::gsm::{AttrValue, BlobRef, EventKind, GuardExpression};
use feaflow_core::store::StudyStore;
use feaflow_core::study::{ManualInputs, ReplayReport, ReplayScript, RunSource, ScriptLine, CASE_STUDY_JSONL};
use feaflow_core::toolbox::digest_of;
use feaflow_service::api::*;
use serde::Serialize;

use crate::backend::{Backend, Local, Remote};
use crate::*;

/// Stdout writes that tolerate a closed pipe (`feaflow ... | head`).
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! say_raw {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

type Result<T, E = ApiError> = std::result::Result<T, E>;

pub fn run(cli: &Cli) -> Result<()> {
    if let Command::Serve { addr } = &cli.command {
        return serve(cli, *addr);
    }
    let mut backend = open(cli)?;
    let b = backend.as_mut();
    match &cli.command {
        Command::Study(cmd) => study(cli, b, cmd),
        Command::Stage(StageCmd::Enter { artifact, stage }) => submit(cli, b, EventKind::enter(artifact, stage)),
        Command::Stage(StageCmd::Leave {
            artifact,
            stage,
            outcome,
        }) => submit(cli, b, EventKind::leave(artifact, stage, outcome.as_deref())),
        Command::Artifact(ArtifactCmd::Create {
            artifact_type,
            id,
            owner,
        }) => submit(cli, b, EventKind::create(artifact_type, id, owner.as_deref())),
        Command::Attr(AttrCmd::Set(v)) => {
            let value = parse_value(b, v)?;
            submit(cli, b, EventKind::set(&v.artifact, &v.name, value))
        }
        Command::Attr(AttrCmd::Record(v)) => {
            let value = parse_value(b, v)?;
            submit(cli, b, EventKind::result(&v.artifact, &v.name, value))
        }
        Command::Link(LinkCmd::Add { from, link, to }) => submit(cli, b, EventKind::link(from, link, to)),
        Command::Suggest { goal, artifact, pddl } => {
            let id = current(cli)?;
            let q = PlanQuery {
                goal: goal.clone(),
                artifact: artifact.clone(),
            };
            if *pddl {
                let p = b.pddl(&id, &q)?;
                return emit(cli, &p, || format!("{}\n{}", p.domain, p.problem));
            }
            let g = b.plan(&id, &q)?;
            emit(cli, &g, || {
                let mut out = String::new();
                for (i, s) in g.suggestions.iter().enumerate() {
                    out += &format!("{}. {}\n", i + 1, s.title);
                    for step in &s.steps {
                        for item in &step.sub_items {
                            out += &format!("     - {item}\n");
                        }
                    }
                }
                match &g.then {
                    Some(t) => out += &format!("then: {} on {}", t.stage, t.artifact),
                    None if g.plan.is_empty() => out += &format!("{} is already achieved", g.goal.milestone),
                    None => {}
                }
                out.trim_end().to_string()
            })
        }
        Command::Prov(cmd) => {
            let id = current(cli)?;
            let (q, format) = match cmd {
                ProvCmd::Export { format } => (ProvQuery::default(), *format),
                ProvCmd::Query {
                    kind,
                    field_contains,
                    outcome,
                    stage,
                    artifact,
                    format,
                } => (
                    ProvQuery {
                        kind: kind.clone(),
                        field_contains: field_contains.clone(),
                        outcome: outcome.clone(),
                        stage: stage.clone(),
                        artifact: artifact.clone(),
                    },
                    *format,
                ),
            };
            let g = b.provenance(&id, &q)?;
            match format {
                GraphFormat::Json => print_json(&g),
                GraphFormat::Dot => say_raw!("{}", g.to_dot()),
            }
            Ok(())
        }
        Command::Exp(cmd) => experiment(cli, b, cmd),
        Command::Def(DefCmd::Export {
            format,
            version,
            case_study,
        }) => {
            if *case_study {
                say_raw!("{CASE_STUDY_JSONL}");
                return Ok(());
            }
            let v = version
                .clone()
                .unwrap_or_else(|| feaflow_core::study::WORKFLOW_VERSION.to_string());
            let def = b.definition(&v)?;
            match format {
                DefFormat::Json => print_json(&def),
                DefFormat::Yaml => {
                    // serde_yaml cannot emit nested enums directly; their JSON shape is fine.
                    let tree = serde_json::to_value(&def).expect("definitions serialize");
                    say_raw!(
                        "{}",
                        serde_yaml::to_string(&tree).map_err(|e| ApiError::internal(e.to_string()))?
                    )
                }
            }
            Ok(())
        }
        Command::Serve { .. } => unreachable!("handled above"),
    }
}

fn open(cli: &Cli) -> Result<Box<dyn Backend>> {
    Ok(match &cli.server {
        Some(url) => Box::new(Remote::new(url)?),
        None => Box::new(Local::new(StudyStore::open(&cli.store)?)),
    })
}

fn serve(cli: &Cli, addr: std::net::SocketAddr) -> Result<()> {
    let store = StudyStore::open(&cli.store)?;
    let server = feaflow_service::BackgroundServer::start(store, addr)
        .map_err(|e| ApiError::internal(format!("cannot listen on {addr}: {e}")))?;
    eprintln!("serving {} on {}", cli.store.display(), server.url());
    loop {
        std::thread::park();
    }
}

/// Print an error the way the chosen output mode expects.
pub fn report(cli: &Cli, e: &ApiError) {
    if cli.json {
        eprintln!("{}", serde_json::to_string(e).expect("errors serialize"));
        return;
    }
    eprintln!("error: {}", e.message);
    let unmet = e
        .detail
        .as_ref()
        .and_then(|d| d.get("unmet"))
        .and_then(|u| serde_json::from_value::<GuardExpression>(u.clone()).ok());
    if let Some(unmet) = unmet {
        eprintln!("unmet: {unmet}");
    }
}

fn print_json<T: Serialize>(v: &T) {
    say!("{}", serde_json::to_string_pretty(v).expect("outputs serialize"));
}

fn emit<T: Serialize>(cli: &Cli, v: &T, text: impl FnOnce() -> String) -> Result<()> {
    if cli.json {
        print_json(v);
    } else {
        say!("{}", text());
    }
    Ok(())
}

fn pointer(cli: &Cli) -> PathBuf {
    cli.store.join("current")
}

fn current(cli: &Cli) -> Result<String> {
    if let Some(id) = &cli.study {
        return Ok(id.clone());
    }
    match fs::read_to_string(pointer(cli)) {
        Ok(id) if !id.trim().is_empty() => Ok(id.trim().to_string()),
        _ => Err(ApiError::usage("no current study; run `study new` or pass --study")),
    }
}

fn set_current(cli: &Cli, id: &str) -> Result<()> {
    let io = |e: std::io::Error| ApiError::internal(format!("{}: {e}", pointer(cli).display()));
    fs::create_dir_all(&cli.store).map_err(io)?;
    fs::write(pointer(cli), format!("{id}\n")).map_err(io)
}

fn submit(cli: &Cli, b: &mut dyn Backend, kind: EventKind) -> Result<()> {
    let id = current(cli)?;
    let done = b.submit(&id, vec![kind.into()], false)?;
    emit(cli, &done, || {
        let mut out = Vec::new();
        for (e, fx) in done.events.iter().zip(&done.effects) {
            out.push(format!("#{} accepted", e.seq));
            for m in &fx.achieved {
                out.push(format!("  achieved {} on {}", m.milestone, m.artifact));
            }
            for m in &fx.invalidated {
                out.push(format!("  invalidated {} on {}", m.milestone, m.artifact));
            }
        }
        out.join("\n")
    })
}

fn parse_value(b: &mut dyn Backend, v: &ValueArgs) -> Result<AttrValue> {
    let kind = v.kind.unwrap_or(if v.unit.is_some() {
        ValueKind::Quantity
    } else {
        ValueKind::Text
    });
    let number = || {
        v.value
            .parse::<f64>()
            .map_err(|_| ApiError::usage(format!("{:?} is not a number", v.value)))
    };
    Ok(match kind {
        ValueKind::Text => AttrValue::text(&v.value),
        ValueKind::Number => AttrValue::Number(number()?),
        ValueKind::Quantity => {
            let unit = v
                .unit
                .clone()
                .ok_or_else(|| ApiError::usage("a quantity needs --unit"))?;
            AttrValue::quantity(number()?, unit)
        }
        ValueKind::References => AttrValue::References(
            v.value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect(),
        ),
        ValueKind::Blob => {
            let path = Path::new(&v.value);
            let bytes = fs::read(path).map_err(|e| ApiError::usage(format!("{}: {e}", path.display())))?;
            let stored = b.put_blob(&bytes)?;
            AttrValue::Blob(BlobRef {
                digest: stored.digest,
                name: path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                media_type: v.media_type.clone().unwrap_or_else(|| media_type(path).to_string()),
                size: stored.size,
            })
        }
    })
}

fn media_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => "application/json",
        Some("yaml" | "yml") => "application/yaml",
        Some("txt" | "py") => "text/plain",
        _ => "application/octet-stream",
    }
}

fn study(cli: &Cli, b: &mut dyn Backend, cmd: &StudyCmd) -> Result<()> {
    match cmd {
        StudyCmd::New {
            definition_version,
            empty,
        } => {
            let s = b.create(&CreateStudy {
                definition_version: definition_version.clone(),
                empty: *empty,
            })?;
            set_current(cli, &s.id)?;
            emit(cli, &s, || s.id.clone())
        }
        StudyCmd::Replay { script, abort_after } => {
            let text = match script {
                Some(p) => fs::read_to_string(p).map_err(|e| ApiError::usage(format!("{}: {e}", p.display())))?,
                None => CASE_STUDY_JSONL.to_string(),
            };
            let script = ReplayScript::parse(&text)?;
            script.check_contiguous()?;
            let (id, report) = replay(cli, b, &script, *abort_after)?;
            if cli.json {
                print_json(&serde_json::json!({ "study": id, "report": report }));
            } else {
                say!("{id}: {} events, {} checks", report.events, report.checks);
                for f in &report.failures {
                    say!("  FAILED {f}");
                }
            }
            if report.passed() {
                Ok(())
            } else {
                Err(ApiError::new(
                    Family::Rule,
                    "expectation_failed",
                    format!("{} of {} script checks failed", report.failures.len(), report.checks),
                ))
            }
        }
        StudyCmd::Status { at } => status(cli, b, *at),
        StudyCmd::Watch { since, follow } => {
            let id = current(cli)?;
            b.changes(&id, *since, *follow, &mut |m| {
                if cli.json {
                    say!("{}", serde_json::to_string(&m).expect("changes serialize"));
                } else {
                    let event = serde_json::to_string(&m.event.kind).expect("events serialize");
                    say!("#{} {event}", m.seq);
                }
                true
            })
        }
        StudyCmd::List => {
            let ids = b.list()?;
            emit(cli, &ids, || ids.join("\n"))
        }
        StudyCmd::Use { id } => {
            b.state(id, None)?;
            set_current(cli, id)
        }
    }
}

/// Drive a script through the backend one event at a time, so that the result is exactly
/// what the same requests would produce against the service.
pub fn replay(
    cli: &Cli,
    b: &mut dyn Backend,
    script: &ReplayScript,
    abort_after: Option<usize>,
) -> Result<(String, ReplayReport)> {
    let s = b.create(&CreateStudy {
        definition_version: None,
        empty: true,
    })?;
    set_current(cli, &s.id)?;
    let mut report = ReplayReport::default();
    for line in &script.lines {
        if let ScriptLine::Blob { blob } = line {
            if digest_of(blob.text.as_bytes()) != blob.digest {
                return Err(ApiError::new(
                    Family::Rule,
                    "digest_mismatch",
                    format!("script blob {}", blob.digest),
                ));
            }
            b.put_blob(blob.text.as_bytes())?;
        }
    }
    for line in &script.lines {
        match line {
            ScriptLine::Step { step } => {
                if !cli.json {
                    say!("{step}");
                }
            }
            ScriptLine::Event(ev) => {
                b.submit(&s.id, vec![ev.clone().into()], false)?;
                report.events += 1;
                if abort_after == Some(report.events) {
                    std::process::abort();
                }
            }
            ScriptLine::Expect { expect } => {
                report.checks += 1;
                let view = b.state(&s.id, None)?;
                report.failures.extend(expect.check(&view.state, &view.active_stages));
            }
            ScriptLine::Reject { reject } => {
                report.checks += 1;
                let outcome = b.submit(&s.id, vec![reject.attempt.clone().into()], true);
                let code = outcome.as_ref().map(drop).map_err(|e| e.code.as_str());
                report.failures.extend(reject.check(code));
            }
            ScriptLine::Blob { .. } => {}
        }
    }
    Ok((s.id, report))
}

#[derive(Serialize)]
struct Status {
    study: String,
    next_seq: u64,
    outcomes: Vec<Outcome>,
    enterable: Vec<feaflow_core::gsm::ActiveStage>,
}

#[derive(Serialize)]
struct Outcome {
    artifact: String,
    stage: String,
    outcome: String,
}

fn status(cli: &Cli, b: &mut dyn Backend, at: Option<u64>) -> Result<()> {
    let id = current(cli)?;
    let view = b.state(&id, at)?;
    let prov = b.provenance(&id, &ProvQuery::default())?;
    // Latest verdict per stage execution target; activities are in completion order.
    let mut latest = BTreeMap::new();
    for a in &prov.activities {
        if let Some(o) = a.outcome.as_ref().filter(|_| at.is_none_or(|at| a.ended_at <= at)) {
            latest.insert((a.artifact.clone(), a.stage.clone()), o.clone());
        }
    }
    let st = Status {
        study: id,
        next_seq: view.next_seq,
        outcomes: latest
            .into_iter()
            .map(|((artifact, stage), outcome)| Outcome {
                artifact,
                stage,
                outcome,
            })
            .collect(),
        enterable: view.active_stages,
    };
    emit(cli, &st, || {
        let mut out = format!("study {} at #{}\n", st.study, st.next_seq);
        for o in &st.outcomes {
            out += &format!("{}  {}: {}\n", o.artifact, o.stage, o.outcome);
        }
        out += "enterable:\n";
        for a in &st.enterable {
            out += &format!("  {}  {}\n", a.artifact, a.stage);
        }
        out.trim_end().to_string()
    })
}

fn experiment(cli: &Cli, b: &mut dyn Backend, cmd: &ExpCmd) -> Result<()> {
    let id = current(cli)?;
    match cmd {
        ExpCmd::Fill { experiment } => {
            let f = b.fill(&id, experiment)?;
            emit(cli, &f, || serde_json::to_string_pretty(&f).expect("schemas serialize"))
        }
        ExpCmd::Generate {
            experiment,
            iterations,
            max_size,
            min_size,
        } => {
            let manual = match (iterations, max_size, min_size) {
                (Some(iterations), Some(max_size), Some(min_size)) => Some(ManualInputs {
                    iterations: *iterations,
                    max_size: *max_size,
                    min_size: *min_size,
                }),
                (None, None, None) => None,
                _ => return Err(ApiError::usage("--iterations, --max-size and --min-size go together")),
            };
            let g = b.generate(&id, experiment, manual)?;
            emit(cli, &g, || g.script.clone())
        }
        ExpCmd::Run {
            experiment,
            script,
            assess,
        } => {
            let req = RunRequest {
                source: if *script {
                    RunSource::Script
                } else {
                    RunSource::Specification
                },
                assess: *assess,
            };
            let r = b.run(&id, experiment, &req)?;
            emit(cli, &r, || {
                let mut out = format!("results in {}", r.run.data);
                if let Some(o) = &r.outcome {
                    out += &format!("\noutcome: {o}");
                }
                out
            })
        }
    }
}
