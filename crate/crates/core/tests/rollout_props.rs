use hemoflow::geom::Vec3;
use hemoflow::meshio::{generate_synthetic_case, FlowSpec, GeometrySpec, NodeType};
use hemoflow::model::{forward_step, FlowCase, Model, ModelConfig};
use hemoflow::rollout::*;
use hemoflow::train::{previous_frame, DatasetSelector, Family, NormStats, Resolution, TrainingCase};
use proptest::prelude::*;

fn small_config() -> ModelConfig {
    ModelConfig { layers: 2, width: 16, heads: 2, dilated_layers: 1, decoder_layers: 0, ..ModelConfig::toy() }
}

fn small_case() -> TrainingCase {
    let geom = GeometrySpec { target_edge_length: 0.8, ..GeometrySpec::default() };
    let syn = generate_synthetic_case(&geom, &FlowSpec::default()).unwrap();
    let dataset = DatasetSelector { family: Family::FewShot, resolution: Resolution::Coarse };
    TrainingCase::from_synthetic("small", dataset, syn, &small_config(), 5).unwrap()
}

/// Oracle increments plus a constant drift on every free node.
struct Drifting<'a> {
    oracle: OracleStepper<'a>,
    drift: f64,
}

impl Stepper for Drifting<'_> {
    fn next_velocity(&mut self, case: &FlowCase, u: &[Vec3], prev: &[Vec3], step: usize) -> hemoflow::Result<Vec<Vec3>> {
        let mut next = self.oracle.next_velocity(case, u, prev, step)?;
        next.iter_mut().for_each(|v| v[0] += self.drift);
        Ok(next)
    }
}

#[test]
fn zero_weight_model_keeps_interior_at_rest() {
    let tc = small_case();
    let case = &tc.case;
    let model = Model::<f64>::zeroed(small_config()).unwrap();
    let stats = NormStats::identity(15, 3);
    let mut start = vec![[0.0; 3]; case.num_nodes()];
    case.enforce_boundaries(&mut start, 0.0);
    let mut stepper = ModelStepper { model: &model, stats: &stats, aug: &tc.aug };
    let r = rollout(&mut stepper, case, &start, &start, 6).unwrap();
    assert!(r.boundary_violations.is_empty());
    let inlet = case.mesh.nodes_of_type(NodeType::Inlet);
    for (k, f) in r.frames.iter().enumerate() {
        assert!(case.boundaries_hold(f, k as f64 * case.dt));
        for i in 0..case.num_nodes() {
            if !inlet.contains(&i) {
                assert_eq!(f[i], [0.0; 3]);
            }
        }
    }
}

#[test]
fn single_step_rollout_is_forward_step() {
    let tc = small_case();
    let model = Model::<f64>::new(small_config(), 2).unwrap();
    let stats = NormStats::identity(15, 3);
    let prev = previous_frame(&tc.frames, 0);
    let mut stepper = ModelStepper { model: &model, stats: &stats, aug: &tc.aug };
    let r = rollout(&mut stepper, &tc.case, &tc.frames[0], prev, 1).unwrap();
    let direct = forward_step(&model, &stats, &tc.case, &tc.aug, &tc.frames[0], prev, 0.0, tc.case.dt).unwrap();
    assert_eq!(r.frames[1], direct);
}

#[test]
fn random_model_rollout_respects_boundaries_every_step() {
    let tc = small_case();
    let model = Model::<f32>::new(small_config(), 4).unwrap();
    let stats = NormStats::identity(15, 3);
    let mut stepper = ModelStepper { model: &model, stats: &stats, aug: &tc.aug };
    let r = rollout(&mut stepper, &tc.case, &tc.frames[0], previous_frame(&tc.frames, 0), 10).unwrap();
    assert!(r.boundary_violations.is_empty());
    assert_eq!(r.step_seconds.len(), 10);
}

#[test]
fn oracle_reproduces_the_ground_truth_bitwise() {
    let tc = small_case();
    // Stored frames are single precision; boundary values are prescribed
    // analytically, so the reference carries the enforced values.
    let mut truth = tc.frames.clone();
    for (k, f) in truth.iter_mut().enumerate() {
        tc.case.enforce_boundaries(f, k as f64 * tc.case.dt);
    }
    let prev = previous_frame(&truth, 0).to_vec();
    let mut oracle = OracleStepper { frames: &truth };
    let r = rollout(&mut oracle, &tc.case, &truth[0], &prev, truth.len() - 1).unwrap();
    for (a, b) in r.frames.iter().zip(&truth) {
        assert!(a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| x.to_bits() == y.to_bits() || x == y));
    }
    assert!(r.boundary_violations.is_empty());
    let mut oracle = OracleStepper { frames: &truth };
    assert_eq!(all_rollout_error(&mut oracle, &tc.case, &truth, &prev).unwrap().mse, 0.0);
    let mut oracle = OracleStepper { frames: &truth };
    assert_eq!(one_step_error(&mut oracle, &tc.case, &truth, &prev).unwrap().mse, 0.0);
}

#[test]
fn one_frame_horizon_makes_both_errors_equal() {
    let tc = small_case();
    let model = Model::<f64>::new(small_config(), 8).unwrap();
    let stats = NormStats::identity(15, 3);
    let prev = previous_frame(&tc.frames, 0);
    let truth = &tc.frames[..2];
    let mut s = ModelStepper { model: &model, stats: &stats, aug: &tc.aug };
    let one = one_step_error(&mut s, &tc.case, truth, prev).unwrap();
    let all = all_rollout_error(&mut s, &tc.case, truth, prev).unwrap();
    assert_eq!(one, all);
}

#[test]
fn accumulated_drift_dominates_single_steps() {
    let tc = small_case();
    let prev = previous_frame(&tc.frames, 0);
    let mut s = Drifting { oracle: OracleStepper { frames: &tc.frames }, drift: 0.5 };
    let one = one_step_error(&mut s, &tc.case, &tc.frames, prev).unwrap();
    let all = all_rollout_error(&mut s, &tc.case, &tc.frames, prev).unwrap();
    assert!(one.mse > 0.0);
    assert!(all.mse >= one.mse);
}

fn field(n: usize) -> impl Strategy<Value = Vec<Vec3>> {
    proptest::collection::vec(proptest::array::uniform3(-50.0f64..50.0), n)
}

proptest! {
    #[test]
    fn metrics_ignore_node_order(
        (a, b, c, d, perm) in (2usize..20).prop_flat_map(|n| {
            (field(n), field(n), field(n), field(n), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
        })
    ) {
        let pred = vec![a.clone(), b.clone()];
        let truth = vec![c.clone(), d.clone()];
        let shuffle = |f: &Vec<Vec3>| perm.iter().map(|&i| f[i]).collect::<Vec<_>>();
        let pred_p: Vec<_> = pred.iter().map(shuffle).collect();
        let truth_p: Vec<_> = truth.iter().map(shuffle).collect();
        let e = mean_squared_error(&pred, &truth).unwrap().mse;
        let ep = mean_squared_error(&pred_p, &truth_p).unwrap().mse;
        prop_assert!((e - ep).abs() <= 1e-9 * e.max(1.0));
        let all: Vec<usize> = (0..a.len()).collect();
        let l = bulge_l2_error(&pred, &truth, &all).unwrap();
        let lp = bulge_l2_error(&pred_p, &truth_p, &all).unwrap();
        prop_assert!((l - lp).abs() <= 1e-9 * l.max(1.0));
    }
}
