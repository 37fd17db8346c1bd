use hemoflow::meshio::{generate_synthetic_case, FlowSpec, GeometrySpec};
use hemoflow::model::{MaeMask, ModelConfig, Trainable};
use hemoflow::tensor::ParamAccess;
use hemoflow::train::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn small_config() -> ModelConfig {
    ModelConfig { layers: 2, width: 16, heads: 2, dilated_layers: 1, decoder_layers: 1, ..ModelConfig::toy() }
}

fn small_case(seed: u64) -> TrainingCase {
    let geom = GeometrySpec { target_edge_length: 0.9, ..GeometrySpec::default() };
    let syn = generate_synthetic_case(&geom, &FlowSpec { seed, ..FlowSpec::default() }).unwrap();
    let dataset = DatasetSelector { family: Family::FewShot, resolution: Resolution::Coarse };
    TrainingCase::from_synthetic(format!("case{seed}"), dataset, syn, &small_config(), 5).unwrap()
}

fn phase(steps: u64, mask_ratio: f64) -> PhaseSpec {
    PhaseSpec {
        name: "p".into(),
        dataset: DatasetSelector { family: Family::FewShot, resolution: Resolution::Coarse },
        steps,
        lr_max: 1e-3,
        lr_min: 1e-5,
        batch_size: 1,
        noise_sigma: ALIGNED_NOISE,
        mask_ratio,
        trainable: Trainable::All,
    }
}

fn params(tr: &Trainer<f32>) -> Vec<(String, Vec<f32>)> {
    let mut out = Vec::new();
    tr.model.visit_params_ref(&mut |n, p| out.push((n.to_string(), p.data().to_vec())));
    out
}

fn trainer(corpus: &Corpus) -> Trainer<f32> {
    let stats = corpus.fit_norm_stats(ALIGNED_NOISE).unwrap();
    Trainer::new(small_config(), stats, Seeds::from_base(3)).unwrap()
}

#[test]
fn one_step_phase_applies_one_update() {
    let corpus = Corpus::new(vec![small_case(1)]);
    let mut tr = trainer(&corpus);
    let before = params(&tr);
    tr.run_schedule(&[phase(1, 0.0)], &corpus, None).unwrap();
    assert_eq!(tr.optimizer.step, 1);
    assert_eq!(tr.log.len(), 1);
    assert_ne!(params(&tr), before);
}

#[test]
fn masked_pass_reaches_the_masked_token() {
    let corpus = Corpus::new(vec![small_case(1)]);
    let tc = &corpus.cases[0];
    let mut tr = trainer(&corpus);
    let s = tc.sample(4, [0.0; 3], 0);
    let x = tr.stats.normalize_inputs::<f32>(&s.features.data);
    let y = tr.stats.normalize_outputs::<f32>(&s.target);
    let token_grad = |tr: &Trainer<f32>| {
        let mut g = 0.0f32;
        tr.model.visit_params_ref(&mut |n, p| {
            if n == "masked_token" {
                g = p.grad().unwrap().iter().map(|v| v.abs()).sum();
            }
        });
        g
    };
    tr.model.zero_grads();
    tr.accumulate(&x, &y, &tc.aug, None, tc.case.free_nodes(), Trainable::All, 1.0).unwrap();
    assert_eq!(token_grad(&tr), 0.0);
    let mask = MaeMask::new(&tc.aug, 0.5, 7).unwrap();
    tr.model.zero_grads();
    tr.accumulate(&x, &y, &tc.aug, Some(&mask), tc.case.free_nodes(), Trainable::All, 1.0).unwrap();
    assert!(token_grad(&tr) > 0.0);
    let before = params(&tr);
    tr.run_schedule(&[phase(1, 0.5)], &corpus, None).unwrap();
    let after = params(&tr);
    let token = |p: &[(String, Vec<f32>)]| p.iter().find(|(n, _)| n == "masked_token").unwrap().1.clone();
    assert_ne!(token(&before), token(&after));
}

#[test]
fn single_part_macro_step_matches_a_whole_graph_step() {
    let corpus = Corpus::new(vec![small_case(1)]);
    let tc = &corpus.cases[0];
    let mut a = trainer(&corpus);
    let mut b = a.clone();
    let losses = a
        .submesh_gradient_step(tc, 6, SubmeshStrategy::Partition { parts: 1 }, 1e-3, [0.0; 3], Trainable::All, 9)
        .unwrap();
    assert_eq!(losses.len(), 1);
    let s = tc.clean_sample(6);
    let x = b.stats.normalize_inputs::<f32>(&s.features.data);
    let y = b.stats.normalize_outputs::<f32>(&s.target);
    b.model.zero_grads();
    let loss = b.accumulate(&x, &y, &tc.aug, None, tc.case.free_nodes(), Trainable::All, 1.0).unwrap();
    b.apply(1e-3, Trainable::All);
    assert_eq!(losses[0], loss);
    assert_eq!(params(&a), params(&b));
    assert_eq!(a.optimizer.step, 1);
}

#[test]
fn two_part_macro_step_applies_two_updates_and_descends() {
    let corpus = Corpus::new(vec![small_case(1)]);
    let tc = &corpus.cases[0];
    let mut tr = trainer(&corpus);
    let before = tr.evaluate(tc, 10).unwrap();
    let losses = tr
        .submesh_gradient_step(tc, 10, SubmeshStrategy::Partition { parts: 2 }, 1e-4, [0.0; 3], Trainable::All, 1)
        .unwrap();
    assert_eq!(losses.len(), 2);
    assert_eq!(tr.optimizer.step, 2);
    assert!(tr.evaluate(tc, 10).unwrap() < before);
    let sampled = tr
        .submesh_gradient_step(tc, 10, SubmeshStrategy::NeighborSample { edge_budget: 400 }, 1e-4, [0.0; 3], Trainable::All, 2)
        .unwrap();
    assert_eq!(sampled.len(), 1);
    assert_eq!(tr.optimizer.step, 3);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let corpus = Corpus::new(vec![small_case(1)]);
    let mut tr = trainer(&corpus);
    tr.run_schedule(&[phase(3, 0.0)], &corpus, None).unwrap();
    let bytes = Checkpoint::from_trainer(&tr, vec![0.0]).to_bytes().unwrap();
    let back: Trainer<f32> = Checkpoint::from_bytes(&bytes).unwrap().into_trainer().unwrap();
    assert_eq!(params(&back), params(&tr));
    assert_eq!(back.optimizer.step, tr.optimizer.step);
    assert_eq!(back.stats, tr.stats);
    assert_eq!(Checkpoint::from_trainer(&back, vec![0.0]).to_bytes().unwrap(), bytes);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    Checkpoint::from_trainer(&tr, vec![0.0]).save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
}

#[test]
fn resuming_from_a_checkpoint_matches_an_uninterrupted_run() {
    let corpus = Corpus::new(vec![small_case(1), small_case(2)]);
    let schedule = [phase(3, 0.0), PhaseSpec { name: "q".into(), ..phase(3, 0.5) }];
    let mut straight = trainer(&corpus);
    straight.run_schedule(&schedule, &corpus, None).unwrap();
    let mut first = trainer(&corpus);
    first.run_schedule(&schedule, &corpus, Some(4)).unwrap();
    assert_eq!(first.progress, Progress { phase: 1, phase_step: 1 });
    let bytes = Checkpoint::from_trainer(&first, vec![0.0, 0.5]).to_bytes().unwrap();
    let mut resumed: Trainer<f32> = Checkpoint::from_bytes(&bytes).unwrap().into_trainer().unwrap();
    resumed.run_schedule(&schedule, &corpus, None).unwrap();
    assert_eq!(params(&resumed), params(&straight));
    assert_eq!(resumed.optimizer.step, 6);
}

#[test]
fn normalised_corpus_has_zero_mean_and_unit_variance() {
    let corpus = Corpus::new(vec![small_case(1), small_case(2)]);
    let stats = corpus.fit_norm_stats(ALIGNED_NOISE).unwrap();
    let mut inputs = MomentAccumulator::new(stats.input_mean.len());
    let mut outputs = MomentAccumulator::new(stats.output_mean.len());
    for (ci, c) in corpus.cases.iter().enumerate() {
        for k in 0..c.num_samples() {
            let s = c.sample(k, ALIGNED_NOISE, ((ci as u64) << 32) | k as u64);
            inputs.push_rows(&stats.normalize_inputs::<f64>(&s.features.data));
            outputs.push_rows(&stats.normalize_outputs::<f64>(&s.target));
        }
    }
    for ((mean, std), raw_std) in [inputs.finish(), outputs.finish()]
        .into_iter()
        .flat_map(|(m, s)| m.into_iter().zip(s))
        .zip(stats.input_std.iter().chain(&stats.output_std))
    {
        assert!(mean.abs() < 1e-6, "mean {mean}");
        if *raw_std > 1e-8 {
            assert!((std * std - 1.0).abs() < 1e-4, "variance {}", std * std);
        }
    }
}

#[test]
fn scaling_exponent_survives_five_percent_noise() {
    let budgets = [1e15, 1e16, 1e17, 1e18, 1e19, 1e20];
    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut inside = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<(f64, f64)> =
            budgets.iter().map(|&c| (c, 2.0 * f64::powf(c, 0.75) * (1.0 + noise.sample(&mut rng)))).collect();
        let a = fit_scaling_law(&pts).unwrap().exponent;
        if (0.70..=0.80).contains(&a) {
            inside += 1;
        }
    }
    assert_eq!(inside, 100);
}

#[test]
fn sweep_records_are_reproducible() {
    let corpus = Corpus::new(vec![small_case(1)]);
    let eval = small_case(2);
    let settings = SweepSettings {
        lr_max: 1e-3,
        lr_min: 1e-5,
        batch_size: 1,
        noise_sigma: ALIGNED_NOISE,
        seed: 4,
        eval_steps: Some(3),
    };
    let config = small_config();
    let nodes = corpus.cases[0].case.num_nodes() as f64;
    let budget = 2.5 * flops_estimate(&config, nodes as u64);
    let one = isoflops_sweep(&[budget], &[config.clone()], &corpus, &eval, &settings).unwrap();
    assert_eq!(one.records.len(), 1);
    assert_eq!(one.records[0].steps, 2);
    assert_eq!(one.best, vec![(budget, 0)]);
    let two = isoflops_sweep(&[budget], &[config.clone(), config], &corpus, &eval, &settings).unwrap();
    assert_eq!(two.records.len(), 2);
    assert_eq!(two.records[0].all_rollout_mse, two.records[1].all_rollout_mse);
    assert_eq!(two.records[0].all_rollout_mse, one.records[0].all_rollout_mse);
    let starved = isoflops_sweep(&[budget / 10.0], &[small_config()], &corpus, &eval, &settings).unwrap();
    assert!(starved.records.is_empty() && starved.warnings.len() == 1);
}
