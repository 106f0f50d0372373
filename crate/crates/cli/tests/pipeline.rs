use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use romelab_cli::commands::*;
use romelab_cli::config::{CorpusSettings, RecordSettings, TraceSettings};
use romelab_cli::{ExperimentConfig, Workspace};
use romelab_core::dataset::{CounterfactRecord, WorldSizes};
use romelab_core::editor::{EditMethod, EditResult};
use romelab_core::metrics::{aggregate, EvalOptions, MetricReport, RecordMetrics};
use romelab_core::model::{forward_with, AdamConfig, InterventionSet, ModelConfig, Readout, TensorId, TrainSchedule};
use romelab_core::numerics::CovarianceCache;
use romelab_core::tracing::{average_grids, AveragedGrid, TraceGrid, TraceSite};

fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig {
        world: WorldSizes {
            n_entities: 14,
            n_relations: 2,
            facts_per_relation: 12,
        },
        corpus: CorpusSettings {
            profiles_per_subject: 8,
            ..CorpusSettings::default()
        },
        model: ModelConfig {
            n_layers: 2,
            hidden: 32,
            mlp_dim: 64,
            n_heads: 2,
            ..ModelConfig::default()
        },
        train: TrainSchedule {
            max_epochs: 150,
            adam: AdamConfig::with_lr(1e-2),
            warmup_steps: 20,
            target_accuracy: 0.9,
            ..TrainSchedule::default()
        },
        trace: TraceSettings {
            n_prompts: 12,
            n_noise_repeats: 3,
            ..TraceSettings::default()
        },
        records: RecordSettings {
            n_records: 8,
            n_sweep_records: 4,
            ..RecordSettings::default()
        },
        ..ExperimentConfig::default()
    };
    c.rome.v_star.max_steps = 150;
    c.eval = EvalOptions::default();
    c
}

const PREPARED: [&str; 5] = ["world.json", "corpus.json", "records.json", "sweep_records.json", "checkpoint.json"];

/// A trained tiny workspace, built once.
fn prepared() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path(), tiny_config()).unwrap();
        cmd_world(&ws).unwrap();
        let meta = cmd_train(&ws).unwrap();
        assert!(meta.reached_target);
        dir
    })
    .path()
}

/// A fresh root holding copies of the prepared world, checkpoint and
/// covariance caches.
fn fresh(config: ExperimentConfig) -> (tempfile::TempDir, Workspace) {
    let src = prepared();
    let dir = tempfile::tempdir().unwrap();
    for f in PREPARED {
        std::fs::copy(src.join(f), dir.path().join(f)).unwrap();
    }
    std::fs::create_dir(dir.path().join("covariance")).unwrap();
    for entry in std::fs::read_dir(src.join("covariance")).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), dir.path().join("covariance").join(entry.file_name())).unwrap();
    }
    let ws = Workspace::new(dir.path(), config).unwrap();
    (dir, ws)
}

fn read<T: serde::de::DeserializeOwned>(ws: &Workspace, rel: impl AsRef<Path>) -> T {
    ws.read(rel, "test").unwrap()
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn world_and_training_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let ws = Workspace::new(a.path(), tiny_config()).unwrap();
    cmd_world(&ws).unwrap();
    cmd_train(&ws).unwrap();
    let b = prepared();
    let files = files_under(a.path());
    assert_eq!(files, files_under(b));
    for f in &files {
        assert!(std::fs::read(a.path().join(f)).unwrap() == std::fs::read(b.join(f)).unwrap(), "{}", f.display());
    }
}

#[test]
fn artifacts_carry_provenance() {
    let (_d, ws) = fresh(tiny_config());
    let artifact: romelab_cli::Artifact<serde_json::Value> = ws.read_artifact("world.json", "test").unwrap();
    assert_eq!(artifact.provenance.config_hash, tiny_config().hash());
    assert_eq!(artifact.provenance.seed, 0);
    assert_eq!(artifact.provenance.versions.core, romelab_core::VERSION);
}

#[test]
fn covariance_caches_replay_the_corpus() {
    let (_d, ws) = fresh(tiny_config());
    let world = load_world(&ws).unwrap();
    let corpus = load_corpus(&ws, &world).unwrap();
    let (ckpt, _) = load_checkpoint(&ws).unwrap();
    let d = ckpt.config.mlp_dim;
    for layer in 0..ckpt.config.n_layers {
        let cache: CovarianceCache = read(&ws, covariance_path(&ws, layer));
        assert_eq!((cache.dim, cache.sum_outer.shape()), (d, (d, d)));
        let mut sum = vec![0.0; d * d];
        let mut n = 0;
        for seq in &corpus {
            for piece in seq.chunks(ckpt.config.max_context) {
                let t = forward_with(&ckpt.parameters, &ckpt.config, piece, &InterventionSet::new(), Readout::Last).unwrap();
                for row in 0..piece.len() {
                    let k = t.mlp_key[layer].row(row);
                    for i in 0..d {
                        for j in 0..d {
                            sum[i * d + j] += k[i] * k[j];
                        }
                    }
                    n += 1;
                }
            }
        }
        assert_eq!(cache.n_samples, n);
        let scale = sum.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in cache.sum_outer.as_slice().iter().zip(&sum) {
            assert!((a - b).abs() <= 1e-10 * scale);
        }
    }
}

#[test]
fn zero_noise_traces_have_all_zero_effects() {
    let mut config = tiny_config();
    config.trace.noise_scale = Some(0.0);
    let (_d, ws) = fresh(config);
    for site in [TraceSite::Hidden, TraceSite::Mlp] {
        cmd_trace(&ws, site, false).unwrap();
        let csv = std::fs::read_to_string(ws.path("trace").join(trace_dir_name(site, false)).join("averaged.csv")).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert!(!rows.is_empty());
        for row in rows {
            let effect: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
            assert_eq!(effect, 0.0, "{row}");
        }
    }
}

#[test]
fn hidden_traces_restore_fully_at_the_top_of_the_last_token() {
    let (_d, ws) = fresh(tiny_config());
    let avg = cmd_trace(&ws, TraceSite::Hidden, false).unwrap();
    let dir = PathBuf::from("trace").join(trace_dir_name(TraceSite::Hidden, false));
    let mut grids = Vec::new();
    for i in 0..avg.n_grids {
        let g: TraceGrid = read(&ws, dir.join(format!("prompt_{i:03}.json")));
        let last = g.tokens.len() - 1;
        assert!((g.cells[last][g.n_layers() - 1] - g.clean_p).abs() <= 1e-12);
        assert!(ws.exists(dir.join(format!("prompt_{i:03}.csv"))));
        grids.push(g);
    }
    let offline = average_grids(&grids).unwrap();
    let stored: AveragedGrid = read(&ws, dir.join("averaged.json"));
    assert_eq!(offline, stored);
    assert_eq!(stored, avg);
}

#[test]
fn mlp_disabled_traces_go_to_their_own_directory() {
    let (_d, ws) = fresh(tiny_config());
    let avg = cmd_trace(&ws, TraceSite::Hidden, true).unwrap();
    assert!(avg.disable_mlp);
    assert!(ws.exists("trace/hidden-mlp-disabled/averaged.json"));
}

fn write_records(ws: &Workspace, records: &[CounterfactRecord]) {
    ws.write("records.json", &records.to_vec()).unwrap();
}

#[test]
fn a_null_edit_leaves_the_projection_in_place() {
    let mut config = tiny_config();
    // Any loss counts as converged, so the value optimizer takes no step.
    config.rome.v_star.early_stop_loss = 1e3;
    let (_d, ws) = fresh(config);
    let mut records = load_records(&ws).unwrap();
    // The requested object is the one the model already predicts.
    for r in &mut records {
        std::mem::swap(&mut r.target_new, &mut r.target_true);
    }
    write_records(&ws, &records);
    let summary = cmd_edit(&ws, EditMethod::Rome).unwrap();
    assert_eq!(summary.n_failed(), 0);
    for o in &summary.outcomes {
        let EditStatus::Applied { file } = &o.status else { panic!() };
        let e: EditedCheckpoint = read(&ws, file);
        let result: EditResult = serde_json::from_value(e.edit.details["result"].clone()).unwrap();
        assert!(result.delta_frobenius <= 1e-10 * result.weight_frobenius, "{}", result.delta_frobenius);
    }
}

#[test]
fn rome_batches_meet_the_constraint_and_touch_one_tensor() {
    let (_d, ws) = fresh(tiny_config());
    let before = std::fs::read(ws.path("checkpoint.json")).unwrap();
    let summary = cmd_edit(&ws, EditMethod::Rome).unwrap();
    assert_eq!(std::fs::read(ws.path("checkpoint.json")).unwrap(), before);
    assert_eq!(summary.outcomes.len(), 8);
    assert_eq!(summary.n_failed(), 0);
    let (ckpt, sha) = load_checkpoint(&ws).unwrap();
    for o in &summary.outcomes {
        let EditStatus::Applied { file } = &o.status else { panic!() };
        let e: EditedCheckpoint = read(&ws, file);
        assert_eq!(e.tensors.iter().map(|t| t.0).collect::<Vec<_>>(), vec![TensorId::MlpProj(summary.layer)]);
        let result: EditResult = serde_json::from_value(e.edit.details["result"].clone()).unwrap();
        assert!(result.constraint_residual <= 1e-8, "{}", result.constraint_residual);
        let edited = e.apply(&ckpt.parameters, &sha).unwrap();
        let w = edited.layers[summary.layer].mlp_proj.matvec(&result.k_star).unwrap();
        let err: f64 = w.iter().zip(&result.v_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-8 * (1.0 + result.v_star.iter().map(|v| v * v).sum::<f64>().sqrt()));
        assert!(e.apply(&ckpt.parameters, "other").is_err());
    }
}

#[test]
fn clamped_fine_tuning_respects_the_bound() {
    let mut config = tiny_config();
    config.baselines.ft_l_eps = Some(0.01);
    config.baselines.attn_eps = Some(0.02);
    let (_d, ws) = fresh(config);
    let (ckpt, sha) = load_checkpoint(&ws).unwrap();
    for (method, eps) in [(EditMethod::FtL, 0.01), (EditMethod::AttnEdit, 0.02)] {
        let summary = cmd_edit(&ws, method).unwrap();
        assert_eq!(summary.eps, Some(eps));
        for o in &summary.outcomes {
            let EditStatus::Applied { file } = &o.status else { panic!() };
            let e: EditedCheckpoint = read(&ws, file);
            let edited = e.apply(&ckpt.parameters, &sha).unwrap();
            for id in ckpt.parameters.tensor_ids() {
                let (a, b) = (ckpt.parameters.tensor(id).unwrap(), edited.tensor(id).unwrap());
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() <= eps * (1.0 + 1e-12), "{id:?}");
                }
            }
        }
    }
}

#[test]
fn clamped_editors_need_a_clamp() {
    let (_d, ws) = fresh(tiny_config());
    let err = cmd_edit(&ws, EditMethod::FtL).unwrap_err();
    assert!(matches!(err, romelab_cli::CliError::Missing { .. }), "{err}");
}

#[test]
fn failed_edits_are_logged_and_scored_unedited() {
    let mut config = tiny_config();
    config.baselines.edit_layer = Some(0);
    let (_d, ws) = fresh(config);
    let mut records = load_records(&ws).unwrap();
    // The rewrite prompt no longer mentions the subject.
    records[2].rewrite_prompt = records[3].rewrite_prompt.clone();
    write_records(&ws, &records);
    let summary = cmd_edit(&ws, EditMethod::Ft).unwrap();
    assert_eq!(summary.n_failed(), 1);
    assert!(matches!(summary.outcomes[2].status, EditStatus::Failed { .. }));
    let report = cmd_eval(&ws, Some(EditMethod::Ft)).unwrap();
    assert_eq!(report.n_failed, 1);
    let per_record: Vec<RecordMetrics> = read(&ws, "reports/ft/records.json");
    let unedited = cmd_eval(&ws, None).unwrap();
    let base: Vec<RecordMetrics> = read(&ws, "reports/unedited/records.json");
    assert_eq!(per_record[2], base[2]);
    assert_eq!(unedited.n_failed, 0);
}

#[test]
fn reports_are_means_of_the_stored_records_and_reproducible() {
    let mut config = tiny_config();
    config.eval = ExperimentConfig::default().eval;
    let (_d, ws) = fresh(config);
    let report = cmd_eval(&ws, None).unwrap();
    let per_record: Vec<RecordMetrics> = read(&ws, "reports/unedited/records.json");
    let mean = |f: fn(&RecordMetrics) -> f64| per_record.iter().map(f).sum::<f64>() / per_record.len() as f64;
    assert!((report.report.es.mean - mean(|r| r.es)).abs() <= 1e-12);
    assert!((report.report.nm.mean - mean(|r| r.nm)).abs() <= 1e-12);
    assert!((report.report.ge.unwrap().mean - mean(|r| r.ge.unwrap())).abs() <= 1e-12);
    assert!(report.report.essence.is_some() && report.report.rs.is_some());
    let first = std::fs::read(ws.path("reports/unedited/report.json")).unwrap();
    cmd_eval(&ws, None).unwrap();
    assert_eq!(std::fs::read(ws.path("reports/unedited/report.json")).unwrap(), first);
    let table = std::fs::read_to_string(ws.path("reports/unedited/report.txt")).unwrap();
    assert!(table.contains("Unedited"));
}

#[test]
fn evaluation_rejects_edits_of_another_checkpoint() {
    let (_d, ws) = fresh(tiny_config());
    let mut summary = cmd_edit(&ws, EditMethod::Ft).unwrap();
    summary.base_sha256 = "0".repeat(64);
    ws.write("edits/ft/summary.json", &summary).unwrap();
    assert!(matches!(cmd_eval(&ws, Some(EditMethod::Ft)), Err(romelab_cli::CliError::Mismatch(_))));
    summary.outcomes.pop();
    assert!(cmd_eval(&ws, Some(EditMethod::Ft)).is_err());
}

#[test]
fn a_one_point_sweep_equals_a_plain_edit_and_evaluation() {
    let mut config = tiny_config();
    config.paths.sweep_records = "records.json".into();
    config.sweep.layers = vec![1];
    config.sweep.eps = vec![0.02];
    config.baselines.edit_layer = Some(1);
    config.baselines.ft_l_eps = Some(0.02);
    let (_d, ws) = fresh(config);
    for method in [EditMethod::Rome, EditMethod::FtL] {
        let points = cmd_sweep(&ws, method).unwrap();
        assert_eq!(points.len(), 1);
        cmd_edit(&ws, method).unwrap();
        let plain = cmd_eval(&ws, Some(method)).unwrap();
        assert_eq!(points[0].report, plain.report, "{method:?}");
        assert_eq!(points[0].layer, 1);
    }
}

fn means(r: &MetricReport) -> [f64; 6] {
    [r.es.mean, r.ps.mean, r.ns.mean, r.em.mean, r.pm.mean, r.nm.mean]
}

#[test]
fn extreme_clamps_bracket_the_unedited_and_unconstrained_models() {
    let mut config = tiny_config();
    config.sweep.layers = vec![0];
    config.sweep.eps = vec![0.0, 1e6];
    let (_d, ws) = fresh(config);
    let points = cmd_sweep(&ws, EditMethod::FtL).unwrap();
    let ft = cmd_sweep(&ws, EditMethod::Ft).unwrap();
    let world = load_world(&ws).unwrap();
    let (ckpt, _) = load_checkpoint(&ws).unwrap();
    let records = load_sweep_records(&ws).unwrap();
    let unedited: Vec<RecordMetrics> = evaluate_records(&ckpt.config, &world.tokenizer, &records, &EvalOptions::default(), |_| {
        Ok(std::borrow::Cow::Borrowed(&ckpt.parameters))
    })
    .unwrap();
    assert_eq!(means(&points[0].report), means(&aggregate(&unedited).unwrap()));
    assert_eq!(means(&points[1].report), means(&ft[0].report));
    assert!(ws.exists("sweeps/ft-l.json") && ws.exists("sweeps/ft-l.txt"));
}

#[test]
fn calibration_finds_the_smallest_sufficient_clamp() {
    let mut config = tiny_config();
    config.baselines.calibration.iterations = 4;
    config.baselines.calibration.target_es = 0.5;
    let (_d, ws) = fresh(config);
    let cal = cmd_calibrate(&ws, EditMethod::FtL).unwrap();
    assert!(cal.reached && cal.es >= 0.5);
    assert_eq!(cal.history.len(), 5);
    for &(eps, es) in &cal.history {
        if eps < cal.eps {
            assert!(es < 0.5 || eps == cal.history[0].0);
        }
    }
    let summary = cmd_edit(&ws, EditMethod::FtL).unwrap();
    assert_eq!(summary.eps, Some(cal.eps));
    assert!(cmd_calibrate(&ws, EditMethod::Rome).is_err());
}

#[test]
fn sweeps_default_to_fifty_held_out_records() {
    let config = ExperimentConfig::default();
    assert_eq!(config.records.n_sweep_records, 50);
    assert_eq!(config.records.n_records, 100);
    let (_d, ws) = fresh(tiny_config());
    let eval: Vec<usize> = load_records(&ws).unwrap().iter().map(|r| r.case_id).collect();
    let sweep = load_sweep_records(&ws).unwrap();
    assert_eq!(sweep.len(), 4);
    assert!(sweep.iter().all(|r| !eval.contains(&r.case_id)));
}

#[test]
fn overrides_and_validation() {
    let c = ExperimentConfig::default()
        .with_overrides(&["seed=5".into(), "trace.n_prompts=7".into(), "model.wiring=parallel".into()])
        .unwrap();
    assert_eq!((c.seed, c.trace.n_prompts), (5, 7));
    assert_ne!(c.hash(), ExperimentConfig::default().hash());
    assert!(ExperimentConfig::default().with_overrides(&["nope=1".into()]).is_err());
    assert!(ExperimentConfig::default().with_overrides(&["seed".into()]).is_err());
    let mut bad = ExperimentConfig::default();
    bad.baselines.calibration.lo = 0.0;
    assert!(Workspace::new("x", bad).is_err());
}

#[test]
fn the_binary_reports_structured_errors() {
    let out = tempfile::tempdir().unwrap();
    let run = Command::new(env!("CARGO_BIN_EXE_romelab"))
        .args(["eval", "--method", "rome"])
        .env("ROMELAB_OUT", out.path())
        .output()
        .unwrap();
    assert!(!run.status.success());
    let err: serde_json::Value = serde_json::from_slice(&run.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "missing_artifact");
    let ok = Command::new(env!("CARGO_BIN_EXE_romelab"))
        .args(["config", "--set", "seed=9"])
        .output()
        .unwrap();
    assert!(ok.status.success());
    let shown: ExperimentConfig = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(shown.seed, 9);
}

#[test]
fn the_binary_writes_under_the_output_root() {
    let out = tempfile::tempdir().unwrap();
    let config = out.path().join("tiny.json");
    std::fs::write(&config, serde_json::to_string(&tiny_config()).unwrap()).unwrap();
    let run = Command::new(env!("CARGO_BIN_EXE_romelab"))
        .args(["world", "--config", config.to_str().unwrap()])
        .env("ROMELAB_OUT", out.path().join("run"))
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(std::fs::read(out.path().join("run/world.json")).unwrap(), std::fs::read(prepared().join("world.json")).unwrap());
}
