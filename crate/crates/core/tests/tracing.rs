mod common;

use romelab_core::dataset::{find_subject_span, WorldModel};
use romelab_core::model::{argmax, forward, InterventionSet, ModelConfig, Parameters};
use romelab_core::tracing::*;

fn known() -> Vec<TracePrompt> {
    let (world, config, params) = common::trained();
    select_known_prompts(params, config, world, 12).unwrap().prompts
}

fn config(site: TraceSite, noise_scale: f64) -> TraceConfig {
    TraceConfig {
        noise_scale,
        n_noise_repeats: 3,
        site,
        ..TraceConfig::default()
    }
}

#[test]
fn selected_prompts_are_recalled_by_the_model() {
    let (world, cfg, params) = common::trained();
    let selected = select_known_prompts(params, cfg, world, 12).unwrap();
    assert_eq!(selected.prompts.len(), 12);
    assert_eq!(selected.shortfall, 0);
    for p in &selected.prompts {
        p.validate().unwrap();
        let trace = forward(params, cfg, &p.tokens, &InterventionSet::new()).unwrap();
        assert_eq!(argmax(trace.last_distribution()), p.correct_object, "{}", p.text);
        assert_eq!(trace.last_distribution()[p.correct_object], p.clean_p);
    }
}

#[test]
fn an_untrained_model_knows_almost_nothing() {
    let world: WorldModel = common::tiny_world();
    let cfg = common::tiny_config(world.tokenizer.len());
    let params = Parameters::zeros(&cfg);
    let selected = select_known_prompts(&params, &cfg, &world, 50).unwrap();
    assert!(selected.prompts.len() <= 2, "{}", selected.prompts.len());
    assert!(selected.shortfall >= 48);
}

#[test]
fn zero_noise_gives_an_all_zero_effect_grid() {
    let (_, cfg, params) = common::trained();
    for site in [TraceSite::Hidden, TraceSite::Mlp, TraceSite::Attn] {
        for prompt in known().iter().take(4) {
            let grid = trace_grid(params, cfg, prompt, &config(site, 0.0)).unwrap();
            assert!((grid.corrupted_p - grid.clean_p).abs() <= 1e-15);
            for i in 0..grid.tokens.len() {
                for l in 0..grid.n_layers() {
                    assert_eq!(grid.effect(i, l), 0.0);
                }
            }
        }
    }
}

#[test]
fn restoring_the_top_of_the_last_token_restores_everything() {
    let (_, cfg, params) = common::trained();
    for prompt in known() {
        let grid = trace_grid(params, cfg, &prompt, &config(TraceSite::Hidden, 1.0)).unwrap();
        let last = grid.tokens.len() - 1;
        assert!((grid.cells[last][cfg.n_layers - 1] - prompt.clean_p).abs() <= 1e-12);
    }
}

#[test]
fn corruption_touches_only_the_subject_embeddings() {
    let (_, cfg, params) = common::trained();
    let clean_tokens = |p: &TracePrompt| forward(params, cfg, &p.tokens, &InterventionSet::new()).unwrap();
    for prompt in known() {
        let clean = clean_tokens(&prompt);
        let (p, corrupted) = corrupted_run(params, cfg, &prompt, 0.5, 9).unwrap();
        let (a, b) = prompt.subject_span;
        for i in 0..prompt.tokens.len() {
            let same = clean.residual[0].row(i) == corrupted.residual[0].row(i);
            assert_eq!(same, !(a..=b).contains(&i), "token {i} of {}", prompt.text);
        }
        assert_eq!(p, corrupted.last_distribution()[prompt.correct_object]);
        let (p0, _) = corrupted_run(params, cfg, &prompt, 0.0, 9).unwrap();
        assert_eq!(p0, prompt.clean_p);
    }
}

#[test]
fn grids_are_deterministic_and_bounded() {
    let (_, cfg, params) = common::trained();
    let prompt = &known()[0];
    let tc = TraceConfig {
        disable_mlp: true,
        ..config(TraceSite::Hidden, 0.3)
    };
    let a = trace_grid(params, cfg, prompt, &tc).unwrap();
    let b = trace_grid(params, cfg, prompt, &tc).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.cells.len(), prompt.tokens.len());
    assert!(a.cells.iter().flatten().all(|p| (0.0..=1.0).contains(p)));
    assert_eq!(a.roles, TokenRole::assign(prompt.tokens.len(), prompt.subject_span));
}

#[test]
fn disabling_mlps_leaves_non_subject_restorations_of_the_last_layer_alone() {
    // The pinned MLP outputs sit at the last subject token, so restoring the
    // final state of the last token still restores everything.
    let (_, cfg, params) = common::trained();
    for prompt in known().iter().take(4) {
        let tc = TraceConfig {
            disable_mlp: true,
            ..config(TraceSite::Hidden, 0.5)
        };
        let grid = trace_grid(params, cfg, prompt, &tc).unwrap();
        let last = grid.tokens.len() - 1;
        assert!((grid.cells[last][cfg.n_layers - 1] - prompt.clean_p).abs() <= 1e-12);
    }
}

fn hand_average(grids: &[TraceGrid], role: TokenRole, layer: usize) -> Option<f64> {
    let mut per_prompt = Vec::new();
    for g in grids {
        let mut sum = 0.0;
        let mut n = 0;
        for (i, r) in g.roles.iter().enumerate() {
            if *r == role {
                sum += g.cells[i][layer] - g.corrupted_p;
                n += 1;
            }
        }
        if n > 0 {
            per_prompt.push(sum / n as f64);
        }
    }
    (!per_prompt.is_empty()).then(|| per_prompt.iter().sum::<f64>() / per_prompt.len() as f64)
}

#[test]
fn averaging_matches_a_hand_rolled_bucketed_mean() {
    let (_, cfg, params) = common::trained();
    let grids: Vec<TraceGrid> = known()
        .iter()
        .map(|p| trace_grid(params, cfg, p, &config(TraceSite::Mlp, 0.5)).unwrap())
        .collect();
    let avg = average_grids(&grids).unwrap();
    assert_eq!(avg.n_grids, grids.len());
    for role in TokenRole::ALL {
        for l in 0..cfg.n_layers {
            match (avg.row(role), hand_average(&grids, role, l)) {
                (Some(row), Some(expected)) => assert!((row[l] - expected).abs() <= 1e-12),
                (None, None) => {}
                other => panic!("{role:?}: {other:?}"),
            }
        }
    }
    let single = average_grids(&grids[..1]).unwrap();
    let doubled = average_grids(&[grids[0].clone(), grids[0].clone()]).unwrap();
    assert_eq!(single.effects, doubled.effects);
}

#[test]
fn averaging_rejects_mismatched_layer_counts() {
    let (_, cfg, params) = common::trained();
    let prompt = &known()[0];
    let g = trace_grid(params, cfg, prompt, &config(TraceSite::Hidden, 0.5)).unwrap();
    let mut short = g.clone();
    for row in &mut short.cells {
        row.pop();
    }
    assert!(average_grids(&[g, short]).is_err());
    assert!(average_grids(&[]).is_err());
}

#[test]
fn csv_has_one_row_per_cell() {
    let (world, cfg, params) = common::trained();
    let prompt = &known()[0];
    let g = trace_grid(params, cfg, prompt, &config(TraceSite::Attn, 0.5)).unwrap();
    let csv = g.to_csv(|t| world.tokenizer.decode(&[t]));
    assert_eq!(csv.lines().count(), 1 + g.tokens.len() * cfg.n_layers);
    let last = csv.lines().last().unwrap();
    assert!(last.ends_with(&format!(",{}", g.cells[g.tokens.len() - 1][cfg.n_layers - 1])));
}

#[test]
fn bad_prompts_and_configs_are_rejected() {
    let (_, cfg, params): &(WorldModel, ModelConfig, Parameters) = common::trained();
    let mut prompt = known()[0].clone();
    assert!(find_subject_span(&prompt.tokens, &prompt.tokens[prompt.subject_span.0..=prompt.subject_span.1]).is_some());
    let bad_config = TraceConfig {
        n_noise_repeats: 0,
        ..TraceConfig::default()
    };
    assert!(trace_grid(params, cfg, &prompt, &bad_config).is_err());
    prompt.subject_span = (0, prompt.tokens.len());
    assert!(trace_grid(params, cfg, &prompt, &TraceConfig::default()).is_err());
}

#[test]
fn windows_are_ten_wide_and_clipped() {
    assert_eq!(restore_window(0, 10, 48), (0, 9));
    assert_eq!(restore_window(20, 10, 48), (16, 25));
    assert_eq!(restore_window(47, 10, 48), (43, 47));
    assert_eq!(restore_window(2, 10, 4), (0, 3));
    assert_eq!(restore_window(1, 1, 4), (1, 1));
}
