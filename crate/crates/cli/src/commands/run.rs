use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use qflow_core::active_space::enumerate_spaces;
use qflow_core::downfolding::bloch_hybrid_solve;
use qflow_core::flow::{
    importance_order, run_ccflow_nonhermitian, run_qflow, run_subflow, FlowConfig, FlowTrace,
    HeffChoice, Selection,
};
use qflow_core::fock::{SectorBasis, SpinOrbitalBasis};
use qflow_core::hamiltonian::build_matrix;

use crate::commands::{format_name, load_store, resolve_format};
use crate::manifest::RunManifest;
use crate::{qlog, Mode, OnOff, RunArgs};

#[derive(Serialize)]
struct Summary {
    schema_version: u32,
    manifest_hash: String,
    mode: String,
    energy: f64,
    e_ref: f64,
    cycles: usize,
    converged: bool,
    n_spaces: usize,
    parameters_optimized: usize,
    background_keys: usize,
    main_space_id: usize,
    per_cycle_main_energy: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    selected_spaces: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    equivalence_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    energy_functional: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference_overlap: Option<f64>,
}

#[derive(Serialize)]
struct TraceFile<'a> {
    schema_version: u32,
    manifest_hash: &'a str,
    #[serde(flatten)]
    trace: &'a FlowTrace,
}

/// Flat key=value configuration file; blank lines and # comments ignored.
fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(qflow_core::Error::from)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let Some((k, v)) = t.split_once('=') else {
            bail!(qflow_core::Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got '{t}'"),
            });
        };
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn parse_heff(text: &str) -> Result<HeffChoice> {
    if text == "exact" {
        return Ok(HeffChoice::ExactUnitary);
    }
    if let Some(k) = text.strip_prefix("bch:") {
        let k: usize = k
            .parse()
            .map_err(|_| qflow_core::Error::Config(format!("bad BCH rank in '{text}'")))?;
        return Ok(HeffChoice::Bch(k));
    }
    bail!(qflow_core::Error::Config(format!(
        "unknown heff method '{text}' (expected 'exact' or 'bch:k')"
    )))
}

fn on(v: OnOff) -> bool {
    v == OnOff::On
}

struct Merged {
    config: FlowConfig,
    mode: Mode,
    order: usize,
}

fn merge_config(args: &RunArgs) -> Result<Merged> {
    let file = match &args.config {
        Some(path) => read_config_file(path)?,
        None => BTreeMap::new(),
    };
    let get = |key: &str| file.get(key).map(|s| s.as_str());
    let parse_f64 = |key: &str| -> Result<Option<f64>> {
        get(key)
            .map(|v| {
                v.parse::<f64>().map_err(|_| {
                    anyhow::Error::from(qflow_core::Error::Config(format!(
                        "bad value for {key}: '{v}'"
                    )))
                })
            })
            .transpose()
    };
    let parse_usize = |key: &str| -> Result<Option<usize>> {
        get(key)
            .map(|v| {
                v.parse::<usize>().map_err(|_| {
                    anyhow::Error::from(qflow_core::Error::Config(format!(
                        "bad value for {key}: '{v}'"
                    )))
                })
            })
            .transpose()
    };
    let parse_flag = |key: &str| -> Result<Option<bool>> {
        Ok(match get(key) {
            Some("on") | Some("true") => Some(true),
            Some("off") | Some("false") => Some(false),
            Some(other) => bail!(qflow_core::Error::Config(format!(
                "bad value for {key}: '{other}'"
            ))),
            None => None,
        })
    };

    let mode = args.mode;
    let ne = if args.ne != 4 { args.ne } else { parse_usize("ne")?.unwrap_or(args.ne) };
    let no = if args.no != 4 { args.no } else { parse_usize("no")?.unwrap_or(args.no) };
    let (n_occ_pick, n_virt_pick) = FlowConfig::picks_from_ne_no(ne, no)?;

    let selection = match (args.select_threshold, args.select_topk) {
        (Some(_), Some(_)) => bail!(qflow_core::Error::Config(
            "exactly one of --select-threshold / --select-topk may be given".into()
        )),
        (Some(t), None) => Some(Selection::Threshold(t)),
        (None, Some(k)) => Some(Selection::TopK(k)),
        (None, None) => match (parse_f64("select-threshold")?, parse_usize("select-topk")?) {
            (Some(_), Some(_)) => bail!(qflow_core::Error::Config(
                "config file sets both selection rules".into()
            )),
            (Some(t), None) => Some(Selection::Threshold(t)),
            (None, Some(k)) => Some(Selection::TopK(k)),
            (None, None) => None,
        },
    };

    let defaults = FlowConfig::default();
    let heff = match &args.heff {
        Some(text) => parse_heff(text)?,
        None => match get("heff") {
            Some(text) => parse_heff(text)?,
            None => defaults.heff,
        },
    };
    let config = FlowConfig {
        mode: defaults.mode, // set by the runner
        n_occ_pick,
        n_virt_pick,
        cycles_max: args.cycles.or(parse_usize("cycles")?).unwrap_or(defaults.cycles_max),
        eta: args.eta.or(parse_f64("eta")?).unwrap_or(defaults.eta),
        energy_tol: args.tol.or(parse_f64("tol")?).unwrap_or(defaults.energy_tol),
        grad_tol: defaults.grad_tol,
        trotter_rank: args.trotter.or(parse_usize("trotter")?).unwrap_or(defaults.trotter_rank),
        heff,
        selection,
        background: args
            .background
            .map(on)
            .or(parse_flag("background")?)
            .unwrap_or(defaults.background),
        triples_scope: defaults.triples_scope,
        seed: args.seed.or(parse_usize("seed")?.map(|s| s as u64)).unwrap_or(defaults.seed),
        line_search: args
            .line_search
            .map(on)
            .or(parse_flag("line-search")?)
            .unwrap_or(defaults.line_search),
        jacobi: args.jacobi.map(on).or(parse_flag("jacobi")?).unwrap_or(defaults.jacobi),
        ccflow_residual_tol: defaults.ccflow_residual_tol,
        fci_floor: None,
    };
    let order =
        args.order.or(parse_usize("order")?).unwrap_or(1);
    Ok(Merged { config, mode, order })
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Qflow => "qflow",
        Mode::Subflow => "subflow",
        Mode::Ccflow => "ccflow",
        Mode::Bloch => "bloch",
    }
}

pub fn execute(args: RunArgs) -> Result<ExitCode> {
    let format = resolve_format(&args.input, args.format);
    let store = load_store(&args.input, format)?;
    let merged = merge_config(&args)?;
    qlog!(
        "qflow run: {} orbitals, {} electrons, mode {}",
        store.n_orb,
        store.n_elec,
        mode_name(merged.mode)
    );

    std::fs::create_dir_all(&args.out).map_err(qflow_core::Error::from)?;
    let manifest = RunManifest::new(
        &args.input,
        format_name(format),
        mode_name(merged.mode),
        args.config.as_deref(),
        &args.out,
        serde_json::json!({
            "flow": &merged.config,
            "order": merged.order,
        }),
    );
    let hash = manifest.config_hash.clone();

    let (summary, trace) = match merged.mode {
        Mode::Qflow => {
            let r = run_qflow(&merged.config, &store)?;
            (summarize_flow(&r, "qflow", &hash), Some(r))
        }
        Mode::Subflow => {
            if merged.config.selection.is_none() {
                bail!(qflow_core::Error::Config(
                    "subflow mode needs --select-threshold or --select-topk".into()
                ));
            }
            let r = run_subflow(&merged.config, &store)?;
            (summarize_flow(&r, "subflow", &hash), Some(r))
        }
        Mode::Ccflow => {
            let r = run_ccflow_nonhermitian(&merged.config, &store)?;
            let summary = Summary {
                schema_version: crate::SCHEMA_VERSION,
                manifest_hash: hash.clone(),
                mode: "ccflow".into(),
                energy: r.energy,
                e_ref: r.e_ref,
                cycles: r.cycles_run,
                converged: r.converged,
                n_spaces: r.n_spaces,
                parameters_optimized: r.parameters,
                background_keys: 0,
                main_space_id: r.main_space_id,
                per_cycle_main_energy: Vec::new(),
                selected_spaces: None,
                equivalence_residual: Some(r.residual),
                energy_functional: Some(r.energy_functional),
                reference_overlap: None,
            };
            write_amplitudes(&args.out, &r.state.amplitudes, &hash)?;
            write_trace(&args.out, &r.trace, &hash)?;
            write_json(&args.out.join("summary.json"), &summary)?;
            write_json(&args.out.join("manifest.json"), &manifest)?;
            if !r.converged {
                bail!(qflow_core::Error::Divergence(format!(
                    "non-Hermitian flow stalled at residual {:.3e}",
                    r.residual
                )));
            }
            return Ok(ExitCode::SUCCESS);
        }
        Mode::Bloch => {
            let na = store.n_alpha()?;
            let basis = SpinOrbitalBasis::new(store.n_orb, na, na)?;
            let sector =
                std::sync::Arc::new(SectorBasis::for_sector(&basis, na, store.n_beta()?)?);
            let h = build_matrix(&store, sector)?;
            let spaces =
                enumerate_spaces(&basis, merged.config.n_occ_pick, merged.config.n_virt_pick)?;
            let ranked = importance_order(&store, &basis, &spaces)?;
            let main = &spaces[ranked[0].0];
            let sol = bloch_hybrid_solve(&h, &store, &basis, main, merged.order)?;
            let e_ref = qflow_core::hamiltonian::diagonal_element(&store, &basis.reference());
            let summary = Summary {
                schema_version: crate::SCHEMA_VERSION,
                manifest_hash: hash.clone(),
                mode: "bloch".into(),
                energy: sol.energy,
                e_ref,
                cycles: 0,
                converged: true,
                n_spaces: spaces.len(),
                parameters_optimized: 0,
                background_keys: 0,
                main_space_id: main.id,
                per_cycle_main_energy: Vec::new(),
                selected_spaces: None,
                equivalence_residual: None,
                energy_functional: None,
                reference_overlap: Some(sol.overlap),
            };
            write_trace(&args.out, &FlowTrace::default(), &hash)?;
            write_json(&args.out.join("summary.json"), &summary)?;
            write_json(&args.out.join("manifest.json"), &manifest)?;
            return Ok(ExitCode::SUCCESS);
        }
    };

    let flow = trace.expect("flow modes carry a result");
    write_amplitudes(&args.out, &flow.state.amplitudes, &hash)?;
    if !flow.degeneracy_log.is_empty() {
        std::fs::write(
            args.out.join("degeneracy.log"),
            format!("# manifest_hash={hash}\n{}", flow.degeneracy_log),
        )
        .map_err(qflow_core::Error::from)?;
    }
    write_trace(&args.out, &flow.trace, &hash)?;
    write_json(&args.out.join("summary.json"), &summary)?;
    write_json(&args.out.join("manifest.json"), &manifest)?;
    qlog!("qflow run: energy {:.10}, {} cycles", flow.energy, flow.cycles_run);
    Ok(ExitCode::SUCCESS)
}

fn summarize_flow(r: &qflow_core::flow::FlowResult, mode: &str, hash: &str) -> Summary {
    Summary {
        schema_version: crate::SCHEMA_VERSION,
        manifest_hash: hash.to_string(),
        mode: mode.into(),
        energy: r.energy,
        e_ref: r.e_ref,
        cycles: r.cycles_run,
        converged: r.converged,
        n_spaces: r.n_spaces,
        parameters_optimized: r.parameters,
        background_keys: r.background_keys,
        main_space_id: r.main_space_id,
        per_cycle_main_energy: r.per_cycle_main_energy.clone(),
        selected_spaces: r.selected.clone(),
        equivalence_residual: None,
        energy_functional: None,
        reference_overlap: None,
    }
}

fn write_trace(dir: &Path, trace: &FlowTrace, hash: &str) -> Result<()> {
    let csv = format!("# manifest_hash={hash}\n{}", trace.to_csv());
    std::fs::write(dir.join("trace.csv"), csv).map_err(qflow_core::Error::from)?;
    let file = TraceFile { schema_version: crate::SCHEMA_VERSION, manifest_hash: hash, trace };
    write_json(&dir.join("trace.json"), &file)
}

fn write_amplitudes(
    dir: &Path,
    store: &qflow_core::cluster::AmplitudeStore,
    hash: &str,
) -> Result<()> {
    std::fs::write(
        dir.join("amplitudes.txt"),
        format!("# manifest_hash={hash}\n{}", store.dump()),
    )
    .map_err(qflow_core::Error::from)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(qflow_core::Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(qflow_core::Error::from)?;
    Ok(())
}
