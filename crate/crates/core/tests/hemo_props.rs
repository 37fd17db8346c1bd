use hemoflow::geom::{self, Vec3};
use hemoflow::hemo::*;
use hemoflow::meshio::{generate_synthetic_case, FlowSpec, GeometrySpec, Mesh, NodeType};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Unit cube cut into six tets around its main diagonal.
fn cube() -> Mesh {
    let positions: Vec<Vec3> =
        (0..8).map(|b| [(b & 1) as f64, ((b >> 1) & 1) as f64, ((b >> 2) & 1) as f64]).collect();
    let mut tets = Vec::new();
    for (a, b) in [(1, 2), (2, 1), (1, 4), (4, 1), (2, 4), (4, 2)] {
        tets.push([0, a, a + b, 7]);
    }
    let mut mesh = Mesh {
        positions,
        tets,
        node_type: vec![NodeType::Wall; 8],
        inlet_distance: vec![0.0; 8],
        wall_normals: vec![[0.0; 3]; 8],
    };
    mesh.orient_tets();
    mesh
}

fn tube() -> (Mesh, Vec<usize>) {
    let geom = GeometrySpec { target_edge_length: 0.8, ..GeometrySpec::default() };
    let case = generate_synthetic_case(&geom, &FlowSpec::default()).unwrap();
    (case.mesh, case.bulge_nodes)
}

fn linear_field(mesh: &Mesh, a: &[[f64; 3]; 3], b: Vec3) -> Vec<Vec3> {
    mesh.positions.iter().map(|p| [0, 1, 2].map(|i| geom::dot(a[i], *p) + b[i])).collect()
}

#[test]
fn casson_limits_and_fixture() {
    let p = CassonParams::default();
    let mu0 = p.plateau_viscosity();
    assert!((casson_viscosity(1e6, &p).unwrap() / mu0 - 1.0).abs() < 0.005);
    let at_1000 = 0.0039377464736838706;
    assert!((casson_viscosity(1000.0, &p).unwrap() / at_1000 - 1.0).abs() < 1e-6);
    let plateau = 1.3089172097777588;
    assert!((casson_viscosity(1e-9, &p).unwrap() / plateau - 1.0).abs() < 1e-6);
}

#[test]
fn casson_is_monotone_on_a_log_grid() {
    let p = CassonParams::default();
    let grid: Vec<f64> = (-60..=60).map(|k| 10f64.powf(k as f64 / 10.0)).collect();
    let mu: Vec<f64> = grid.iter().map(|&g| casson_viscosity(g, &p).unwrap()).collect();
    assert!(mu.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn gradient_reproduces_linear_fields() {
    let (mesh, _) = tube();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a: [[f64; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-5.0..5.0)));
    let b = [1.0, -2.0, 3.0];
    for g in velocity_gradient(&mesh, &linear_field(&mesh, &a, b)).unwrap() {
        for i in 0..3 {
            for j in 0..3 {
                assert!((g[i][j] - a[i][j]).abs() < 1e-9, "{g:?} vs {a:?}");
            }
        }
    }
    let uniform = vec![[4.0, 5.0, 6.0]; mesh.num_nodes()];
    for g in velocity_gradient(&mesh, &uniform).unwrap() {
        assert!(g.iter().flatten().all(|x| x.abs() < 1e-9));
    }
}

#[test]
fn pure_shear_on_a_flat_wall() {
    let mut mesh = cube();
    let floor: Vec<usize> = (0..8).filter(|&i| mesh.positions[i][1] == 0.0).collect();
    floor.iter().for_each(|&i| mesh.wall_normals[i] = [0.0, -1.0, 0.0]);
    let rate = 250.0;
    let u: Vec<Vec3> = mesh.positions.iter().map(|p| [rate * p[1], 0.0, 0.0]).collect();
    let params = CassonParams::default();
    let op = WallShear::for_nodes(&mesh, floor, params).unwrap();
    let expect = casson_viscosity(rate, &params).unwrap() * rate;
    for t in op.apply(&mesh, &u).unwrap() {
        assert!((geom::norm(t) / expect - 1.0).abs() < 1e-12);
        assert!((t[0].abs() / geom::norm(t) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn uniform_flow_has_no_shear_and_shear_is_tangent() {
    let (mesh, _) = tube();
    let params = CassonParams::default();
    let op = WallShear::new(&mesh, params).unwrap();
    let (_, wss) = wss_vectors(&mesh, &vec![[1.0, 30.0, -2.0]; mesh.num_nodes()], params).unwrap();
    assert!(wss.iter().all(|t| geom::norm(*t) < 1e-12));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let u: Vec<Vec3> =
            (0..mesh.num_nodes()).map(|_| std::array::from_fn(|_| rng.random_range(-100.0..100.0))).collect();
        for (t, &i) in op.apply(&mesh, &u).unwrap().iter().zip(&op.wall_nodes) {
            assert!(geom::dot(*t, mesh.wall_normals[i]).abs() < 1e-10);
        }
    }
}

#[test]
fn osi_stays_in_range_on_random_series() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let len = rng.random_range(1..12);
        let series: Vec<Vec3> = (0..len).map(|_| std::array::from_fn(|_| rng.random_range(-3.0..3.0))).collect();
        let v = osi(&series, 0.01).unwrap();
        assert!((0.0..=0.5).contains(&v), "{v}");
    }
}

#[test]
fn wall_field_on_a_cycle_and_metrics() {
    let geom = GeometrySpec { target_edge_length: 0.8, ..GeometrySpec::default() };
    let case = generate_synthetic_case(&geom, &FlowSpec::default()).unwrap();
    let frames: Vec<Vec<Vec3>> = (0..case.trajectory.num_steps()).map(|k| case.trajectory.frame_f64(k)).collect();
    let wall = WallField::compute(&case.mesh, &frames, case.trajectory.dt, CassonParams::default()).unwrap();
    assert!(wall.tawss.iter().all(|&t| t >= 0.0));
    assert!(wall.osi.iter().all(|&o| (0.0..=0.5).contains(&o)));
    let m = extract_metrics(&case.mesh, &frames, &wall, &case.bulge_nodes, MetricOptions::default()).unwrap();
    assert!(m.tawss_mean > 0.0 && m.peak_wss >= 0.0 && m.systolic_velocity > 0.0);
    let raw = MetricOptions { peak: PeakMode::Max, ..MetricOptions::default() };
    let m_max = extract_metrics(&case.mesh, &frames, &wall, &case.bulge_nodes, raw).unwrap();
    assert!(m_max.peak_wss >= m.peak_wss && m_max.osi_max >= m.osi_max);
    assess_risk(&m, TawssRule::Symmetric).unwrap();
}

#[test]
fn every_subscore_tuple_lands_in_its_band() {
    for code in 0..81u32 {
        let d = [code % 3, code / 3 % 3, code / 9 % 3, code / 27].map(|v| v as u8);
        let s = RiskSubscores::new(d[0], d[1], d[2], d[3]).unwrap();
        let sum: u32 = d.iter().map(|&v| v as u32).sum();
        let (score, band) = aggregate_risk(&s);
        assert_eq!(score, sum as f64 / 4.0);
        let expect = match sum {
            0..=3 => RiskBand::Low,
            4..=7 => RiskBand::Moderate,
            _ => RiskBand::High,
        };
        assert_eq!(band, expect, "{d:?}");
    }
}

#[test]
fn published_table_rows() {
    let rows = [
        ([1, 1, 1, 1], 1.00, RiskBand::Moderate),
        ([2, 1, 1, 1], 1.25, RiskBand::Moderate),
        ([1, 1, 1, 0], 0.75, RiskBand::Low),
        ([1, 1, 0, 0], 0.50, RiskBand::Low),
        ([2, 2, 2, 2], 2.00, RiskBand::High),
    ];
    for (d, score, band) in rows {
        let s = RiskSubscores::new(d[0], d[1], d[2], d[3]).unwrap();
        assert_eq!(aggregate_risk(&s), (score, band));
    }
}

proptest! {
    #[test]
    fn scaling_shear_scales_tawss_only(
        series in proptest::collection::vec(proptest::array::uniform3(-5.0f64..5.0), 1..20),
        c in 0.01f64..100.0,
    ) {
        let scaled: Vec<Vec3> = series.iter().map(|t| geom::scale(*t, c)).collect();
        let (t0, t1) = (tawss(&series, 0.01).unwrap(), tawss(&scaled, 0.01).unwrap());
        prop_assert!((t1 - c * t0).abs() <= 1e-9 * (1.0 + t1.abs()));
        let (o0, o1) = (osi(&series, 0.01).unwrap(), osi(&scaled, 0.01).unwrap());
        prop_assert!((o0 - o1).abs() < 1e-9);
    }

    #[test]
    fn subscores_are_in_range(t in 0.0f64..10.0, p in 0.0f64..10.0, o in 0.0f64..0.5, v in 0.0f64..120.0) {
        let m = RiskMetrics { tawss_mean: t, peak_wss: p, osi_max: o, systolic_velocity: v };
        for rule in [TawssRule::Symmetric, TawssRule::Escalating] {
            let s = risk_subscores(&m, rule).unwrap();
            prop_assert!(s.as_array().iter().all(|&x| x <= 2));
        }
    }
}
