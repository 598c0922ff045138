mod common;

use chmm::inference::*;
use chmm::model::{ChannelEmission, ChmmModel, EmissionModel, TransitionParams};
use chmm::montage::MontageGraph;
use chmm::signal::FeatureSeries;
use common::*;
use rand::Rng;

#[test]
fn forward_backward_matches_path_enumeration() {
    let mut r = rng(11);
    for case in 0..50 {
        let frames = 1 + case % 7;
        let c = random_chain(&mut r, frames);
        let post = forward_backward(&c);
        let paths = chain_path_log_probs(&c);
        let log_z = lse(&paths.iter().map(|p| p.1).collect::<Vec<_>>());
        assert!((post.log_z - log_z).abs() < 1e-9);
        for t in 0..frames {
            for k in 0..3u8 {
                let p: f64 = paths.iter().filter(|(s, _)| s[t] == k).map(|(_, l)| (l - log_z).exp()).sum();
                assert!((post.gamma[t][k as usize] - p).abs() < 1e-9);
            }
        }
        for t in 1..frames {
            for k in 0..3u8 {
                for kp in 0..3u8 {
                    let p: f64 = paths
                        .iter()
                        .filter(|(s, _)| s[t - 1] == k && s[t] == kp)
                        .map(|(_, l)| (l - log_z).exp())
                        .sum();
                    assert!((post.xi[t - 1][k as usize][kp as usize] - p).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn uninformative_chain_follows_matrix_powers() {
    let (g, h) = (0.2, 0.35);
    let n = 12;
    let c = ChainParams {
        onset: vec![g; n - 1],
        offset: vec![h; n - 1],
        log_weights: vec![[-0.7; 3]; n],
    };
    let post = forward_backward(&c);
    let a = [[1.0 - g, g, 0.0], [0.0, 1.0 - h, h], [0.0, 0.0, 1.0]];
    let mut p = [1.0, 0.0, 0.0];
    for t in 0..n {
        for k in 0..3 {
            assert!((post.gamma[t][k] - p[k]).abs() < 1e-12);
        }
        p = std::array::from_fn(|k| (0..3).map(|j| p[j] * a[j][k]).sum());
    }
    assert!((post.log_z - (-0.7 * n as f64)).abs() < 1e-12);
}

fn single_channel_model(r: &mut rand_chacha::ChaCha8Rng) -> ChmmModel {
    let montage = MontageGraph::isolated(&["Cz"]).unwrap();
    random_model(r, montage, 2)
}

#[test]
fn single_channel_estep_is_exact() {
    let mut r = rng(5);
    for _ in 0..5 {
        let model = single_channel_model(&mut r);
        let feats = random_features(&mut r, model.montage.channels(), 7);
        let out = run_estep(&model, &feats, &EStepConfig::default()).unwrap();
        let evidence = brute_log_evidence(&model, &feats);
        assert!((out.free_energy + evidence).abs() < 1e-9, "{} vs {}", out.free_energy, -evidence);

        let paths = monotone_paths(7);
        let lps: Vec<f64> = paths.iter().map(|p| joint_log_prob(&model, &feats, &[p])).collect();
        for t in 0..7 {
            for k in 0..3u8 {
                let p: f64 = paths
                    .iter()
                    .zip(&lps)
                    .filter(|(s, _)| s[t] == k)
                    .map(|(_, l)| (l - evidence).exp())
                    .sum();
                assert!((out.stats.gamma[0][t][k as usize] - p).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn coupled_free_energy_bounds_the_evidence() {
    let mut r = rng(8);
    for _ in 0..5 {
        let model = random_model(&mut r, line_montage(3), 2);
        let feats = random_features(&mut r, model.montage.channels(), 5);
        let evidence = brute_log_evidence(&model, &feats);
        for coupling in [CouplingExpectation::Exact, CouplingExpectation::MeanActivation] {
            let config = EStepConfig {
                coupling,
                ..EStepConfig::default()
            };
            let out = run_estep(&model, &feats, &config).unwrap();
            if coupling == CouplingExpectation::Exact {
                assert!(out.free_energy + evidence >= -1e-9);
            } else {
                assert!(out.free_energy.is_finite());
            }
        }
    }
}

#[test]
fn decoupled_channels_add_up() {
    let mut r = rng(21);
    let pair = MontageGraph::isolated(&["A", "B"]).unwrap();
    let model = random_model(&mut r, pair, 3);
    let feats = random_features(&mut r, model.montage.channels(), 30);
    let both = run_estep(&model, &feats, &EStepConfig::default()).unwrap();
    let mut sum = 0.0;
    for i in 0..2 {
        let name = &model.montage.channels()[i];
        let single = ChmmModel::new(
            MontageGraph::isolated(&[name]).unwrap(),
            model.trans,
            EmissionModel {
                channels: vec![model.emit.channels[i].clone()],
            },
        )
        .unwrap();
        let f = FeatureSeries::new(vec![name.clone()], vec![feats.frames[i].clone()], 0.75, 1.0).unwrap();
        sum += run_estep(&single, &f, &EStepConfig::default()).unwrap().free_energy;
    }
    assert!((both.free_energy - sum).abs() < 1e-9 * sum.abs());
}

#[test]
fn infinite_tolerance_runs_one_sweep() {
    let mut r = rng(3);
    let model = random_model(&mut r, line_montage(4), 2);
    let feats = random_features(&mut r, model.montage.channels(), 20);
    let config = EStepConfig {
        tol: f64::INFINITY,
        ..EStepConfig::default()
    };
    let out = run_estep(&model, &feats, &config).unwrap();
    assert_eq!(out.sweeps, 1);
    assert_eq!(out.trace.len(), 4);
    assert!(out.trace.iter().all(|e| e.sweep == 1));
}

#[test]
fn zero_coupling_converges_within_two_sweeps() {
    let mut r = rng(4);
    let mut model = random_model(&mut r, line_montage(5), 2);
    model.trans = TransitionParams::new(-2.0, 0.0, -1.5, 0.0).unwrap();
    let feats = random_features(&mut r, model.montage.channels(), 40);
    let out = run_estep(&model, &feats, &EStepConfig::default()).unwrap();
    assert!(out.converged);
    assert!(out.sweeps <= 2);
    let first = out.trace[4].free_energy;
    assert!((out.free_energy - first).abs() <= 1e-12 * first.abs());
}

#[test]
fn free_energy_never_increases_across_chain_updates() {
    let mut r = rng(17);
    for case in 0..6 {
        let model = random_model(&mut r, line_montage(4 + case % 3), 3);
        let feats = random_features(&mut r, model.montage.channels(), 60);
        let config = EStepConfig {
            tol: 1e-12,
            ..EStepConfig::default()
        };
        let out = run_estep(&model, &feats, &config).unwrap();
        let mut prev = out.initial_free_energy;
        for e in &out.trace {
            assert!(e.free_energy <= prev + 1e-8, "case {case}: {} > {prev}", e.free_energy);
            prev = e.free_energy;
        }
    }
}

#[test]
fn standalone_free_energy_agrees_with_estep() {
    let mut r = rng(30);
    let model = random_model(&mut r, line_montage(4), 2);
    let feats = random_features(&mut r, model.montage.channels(), 25);
    let out = run_estep(&model, &feats, &EStepConfig::default()).unwrap();
    let fe = free_energy(&model, &out.chains, &out.stats, &feats, CouplingExpectation::Exact).unwrap();
    assert!((fe - out.free_energy).abs() < 1e-9 * fe.abs());
}

#[test]
fn warm_start_from_converged_chains_stays_put() {
    let mut r = rng(31);
    let model = random_model(&mut r, line_montage(3), 2);
    let feats = random_features(&mut r, model.montage.channels(), 25);
    let config = EStepConfig {
        tol: 1e-12,
        ..EStepConfig::default()
    };
    let out = run_estep(&model, &feats, &config).unwrap();
    let again = run_estep_from(&model, &feats, &config, Some(&out.chains.chains)).unwrap();
    assert!((again.initial_free_energy - out.free_energy).abs() < 1e-9 * out.free_energy.abs());
    assert!(again.free_energy <= out.free_energy + 1e-8);
}

#[test]
fn mean_activation_rule_runs() {
    let mut r = rng(32);
    let model = random_model(&mut r, line_montage(3), 2);
    let feats = random_features(&mut r, model.montage.channels(), 25);
    let config = EStepConfig {
        rule: UpdateRule::MeanActivation,
        ..EStepConfig::default()
    };
    let out = run_estep(&model, &feats, &config).unwrap();
    assert!(out.free_energy.is_finite());
    for (i, chain) in out.chains.chains.iter().enumerate() {
        let (g, h) = update_chain_transitions(&model.trans, &out.stats, &model.montage, i);
        // the last sweep refits each chain from the marginals of the others
        assert_eq!(g.len(), chain.onset.len());
        assert_eq!(h.len(), chain.offset.len());
    }
}

#[test]
fn posterior_invariants_hold() {
    let mut r = rng(40);
    let model = random_model(&mut r, line_montage(4), 2);
    let feats = random_features(&mut r, model.montage.channels(), 30);
    let out = run_estep(&model, &feats, &EStepConfig::default()).unwrap();
    for i in 0..4 {
        let g = &out.stats.gamma[i];
        assert_eq!(g[0], [1.0, 0.0, 0.0]);
        for row in g {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for (t, xi) in out.stats.xi[i].iter().enumerate() {
            let total: f64 = xi.iter().flatten().sum();
            assert!((total - 1.0).abs() < 1e-9);
            for k in 0..3 {
                let row: f64 = xi[k].iter().sum();
                let col: f64 = (0..3).map(|j| xi[j][k]).sum();
                assert!((row - g[t][k]).abs() < 1e-9);
                assert!((col - g[t + 1][k]).abs() < 1e-9);
            }
        }
        let deg = model.montage.aunt_indices(i).len() as f64;
        for &e in &out.stats.expected_aunts[i] {
            assert!((0.0..=deg).contains(&e));
        }
    }
    let resp = mixture_responsibilities(&model.emit, &feats, &out.stats);
    for ch in &resp.tau {
        for frame in ch {
            let s: f64 = frame.iter().flatten().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn expected_aunts_drive_transition_update() {
    let montage = line_montage(3);
    let stats = PosteriorStats {
        gamma: vec![vec![[1.0, 0.0, 0.0], [0.5, 0.5, 0.0]]; 3],
        xi: vec![vec![[[0.5, 0.5, 0.0], [0.0; 3], [0.0; 3]]]; 3],
        expected_aunts: vec![vec![0.0, 0.5], vec![0.0, 1.0], vec![0.0, 0.5]],
    };
    let trans = TransitionParams::INITIAL;
    let mut s = stats.clone();
    s.gamma = vec![vec![[0.5, 0.5, 0.0], [0.5, 0.5, 0.0]]; 3];
    let (g, _) = update_chain_transitions(&trans, &s, &montage, 1);
    assert!((g[0] - 6.692850924284856e-3).abs() < 1e-12);
    let (g, h) = update_chain_transitions(&trans, &stats, &montage, 1);
    assert!((g[0] - 9.110511944006454e-4).abs() < 1e-15);
    assert!((h[0] - 4.742587317756678e-2).abs() < 1e-15);
}

#[test]
fn data_weights_at_the_mean_of_a_unit_gaussian() {
    let ch = ChannelEmission {
        means: vec![[0.3; 5]],
        variances: vec![[1.0; 5]],
        weights_baseline: vec![1.0],
        weights_seizure: vec![1.0],
    };
    let emit = EmissionModel {
        channels: vec![ch.clone(), ch],
    };
    let feats = FeatureSeries::new(vec!["A".into(), "B".into()], vec![vec![[0.3; 5]]; 2], 0.75, 1.0).unwrap();
    let w = set_data_weights(&emit, &feats);
    let expected = -2.5 * (2.0 * std::f64::consts::PI).ln();
    for ch in &w.log_lik {
        assert!((ch[0][0] - expected).abs() < 1e-12);
        assert_eq!(ch[0][0], ch[0][1]);
    }
    assert_eq!(w.log_lik[0], w.log_lik[1]);
}

#[test]
fn responsibilities_single_mixture_and_dominant_component() {
    let mut r = rng(50);
    let stats = PosteriorStats {
        gamma: vec![vec![[0.2, 0.5, 0.3]; 3]],
        xi: vec![vec![[[0.0; 3]; 3]; 2]],
        expected_aunts: vec![vec![0.0; 3]],
    };
    let single = EmissionModel {
        channels: vec![ChannelEmission {
            means: vec![[0.0; 5]],
            variances: vec![[1.0; 5]],
            weights_baseline: vec![1.0],
            weights_seizure: vec![1.0],
        }],
    };
    let feats = random_features(&mut r, &["A".to_string()], 3);
    let tau = mixture_responsibilities(&single, &feats, &stats);
    for t in 0..3 {
        for k in 0..3 {
            assert!((tau.tau[0][t][0][k] - stats.gamma[0][t][k]).abs() < 1e-15);
        }
    }
    let far = EmissionModel {
        channels: vec![ChannelEmission {
            means: vec![[0.0; 5], [50.0; 5]],
            variances: vec![[1.0; 5]; 2],
            weights_baseline: vec![0.5, 0.5],
            weights_seizure: vec![0.3, 0.7],
        }],
    };
    let at_mean = FeatureSeries::new(vec!["A".into()], vec![vec![[0.0; 5]; 3]], 0.75, 1.0).unwrap();
    let tau = mixture_responsibilities(&far, &at_mean, &stats);
    for k in 0..3 {
        assert!(tau.tau[0][1][0][k] / stats.gamma[0][1][k] >= 1.0 - 1e-6);
    }
}

#[test]
fn posterior_file_round_trip() {
    let mut r = rng(60);
    let model = random_model(&mut r, line_montage(2), 2);
    let feats = random_features(&mut r, model.montage.channels(), 6);
    let out = run_estep(&model, &feats, &EStepConfig::default()).unwrap();
    let post = Posteriors::new(feats.channels.clone(), feats.frame_start_seconds.clone(), out.stats.gamma.clone());
    let back = parse_posterior_csv(&post.to_csv()).unwrap();
    assert_eq!(back, post);
    let trace = fe_trace_csv(&out.trace, &feats.channels);
    assert!(trace.starts_with("sweep,channel,free_energy\n1,C0,"));
    assert!(parse_posterior_csv("channel,frame,start_s,p_pre,p_seizure,p_post\nA,0,0,1.5,0,0\n").is_err());
    let _ = r.random::<u8>();
}
