use proptest::prelude::*;

use pgdg::curator::{
    build_kernel, dpp_select_greedy, quantile, reward_to_weight, tube_reward, update_proposal, DctEmbedder, TubeBounds,
};
use pgdg::env::{rollout, BlockRotateConfig, EnvConfig, EnvParams};
use pgdg::geometry::{reanchor_trajectory, slerp, Pose, PoseSequence, Rotation};
use pgdg::relabel::{cem_minimize, select_risky_states, CemConfig};
use pgdg::sampler::{decode, fit_control_points, init_proposal, ControlPoints, InitialSpread, Proposal};
use pgdg::seed;

fn rotation() -> impl Strategy<Value = Rotation> {
    (prop::array::uniform3(-1.0..1.0f64), -3.1..3.1f64).prop_filter_map("degenerate axis", |(axis, angle)| {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        (n > 1e-3).then(|| Rotation::from_axis_angle(axis, angle))
    })
}

fn pose() -> impl Strategy<Value = Pose> {
    (rotation(), prop::array::uniform3(-2.0..2.0f64)).prop_map(|(r, t)| Pose::new(r, t))
}

fn matrix(rows: std::ops::Range<usize>, cols: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0..1.0f64, cols), rows)
}

fn proposal(dim: usize) -> Proposal {
    Proposal {
        mean: vec![0.0; dim],
        std: vec![1.0; dim],
        points: dim,
        dim: 1,
        iteration: 0,
        stalled: false,
    }
}

proptest! {
    #[test]
    fn pose_inverse_composes_to_identity(p in pose()) {
        prop_assert!(p.compose(&p.inverse()).approx_eq(&Pose::IDENTITY, 1e-9));
        prop_assert!(p.inverse().compose(&p).approx_eq(&Pose::IDENTITY, 1e-9));
    }

    #[test]
    fn quaternions_stay_canonical(a in rotation(), b in rotation()) {
        let c = a.compose(&b);
        prop_assert!((c.norm() - 1.0).abs() < 1e-12);
        prop_assert!(c.wxyz()[0] >= 0.0);
    }

    #[test]
    fn slerp_hits_endpoints_and_splits_the_angle(a in rotation(), b in rotation(), alpha in 0.0..1.0f64) {
        prop_assert!(slerp(&a, &b, 0.0).approx_eq(&a, 1e-12));
        prop_assert!(slerp(&a, &b, 1.0).approx_eq(&b, 1e-12));
        let m = slerp(&a, &b, alpha);
        let total = a.angle_to(&b);
        prop_assert!((a.angle_to(&m) - alpha * total).abs() < 1e-7);
        prop_assert!((m.angle_to(&b) - (1.0 - alpha) * total).abs() < 1e-7);
    }

    #[test]
    fn reanchoring_preserves_the_object_frame(
        demo in prop::collection::vec(pose(), 1..8),
        obj0 in pose(),
        new0 in pose(),
    ) {
        let seq = PoseSequence::new(demo.clone()).unwrap();
        let out = reanchor_trajectory(&seq, &obj0, &new0);
        prop_assert_eq!(out.len(), demo.len());
        for (p, q) in demo.iter().zip(out.poses()) {
            let before = obj0.inverse().compose(p);
            let after = new0.inverse().compose(q);
            prop_assert!(before.approx_eq(&after, 1e-9));
        }
        let same = reanchor_trajectory(&seq, &obj0, &obj0);
        for (p, q) in demo.iter().zip(same.poses()) {
            prop_assert!(p.approx_eq(q, 1e-9));
        }
    }

    #[test]
    fn decoded_actions_stay_within_control_point_range(rows in matrix(2..10, 3), extra in 0usize..40) {
        let m = rows.len();
        let horizon = m + extra;
        let c = ControlPoints::from_rows(&rows).unwrap();
        let plan = decode(&c, horizon).unwrap();
        prop_assert_eq!(plan.len(), horizon);
        for d in 0..3 {
            let lo = rows.iter().map(|r| r[d]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[d]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(plan.iter().all(|a| a[d] >= lo - 1e-12 && a[d] <= hi + 1e-12));
        }
        prop_assert_eq!(&plan[0], &rows[0]);
        prop_assert_eq!(&plan[horizon - 1], &rows[m - 1]);
    }

    #[test]
    fn fitting_decoded_plans_recovers_the_control_points(rows in matrix(2..8, 2), extra in 0usize..30) {
        let horizon = rows.len() + extra;
        let c = ControlPoints::from_rows(&rows).unwrap();
        let back = fit_control_points(&decode(&c, horizon).unwrap(), rows.len()).unwrap();
        for (a, b) in back.as_slice().iter().zip(c.as_slice()) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn initial_std_respects_the_floor(actions in matrix(12..30, 2), sigma in 0.0..0.2f64, delta in 0.0..0.01f64) {
        let q = init_proposal(&actions, 6, &InitialSpread::Scalar(sigma), delta).unwrap();
        prop_assert!(q.std.iter().all(|s| *s >= delta.sqrt() && *s >= sigma));
    }

    #[test]
    fn quantile_is_monotone_and_bounded(values in prop::collection::vec(-100.0..100.0f64, 1..50), a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (qa, qb) = (quantile(&values, lo).unwrap(), quantile(&values, hi).unwrap());
        prop_assert!(qa <= qb);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(qa >= min && qb <= max);
    }

    #[test]
    fn tube_reward_is_one_exactly_inside(devs in prop::collection::vec(0.0..3.0f64, 1..60), r_min in 0.0..1.0f64, width in 0.0..2.0f64) {
        let tube = TubeBounds::new(r_min, r_min + width, 0).unwrap();
        let r = tube_reward(&devs, &tube);
        prop_assert!(r <= 1.0 + 1e-12);
        let inside = devs.iter().all(|d| tube.contains(*d));
        prop_assert_eq!(inside, (r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_peak_at_one(rewards in prop::collection::vec(-5.0..1.0f64, 1..40), temp in 0.01..2.0f64) {
        let w = reward_to_weight(&rewards, temp).unwrap();
        prop_assert!(w.iter().all(|x| *x > 0.0 && *x <= 1.0));
        prop_assert!(w.contains(&1.0));
    }

    #[test]
    fn moment_matching_floor_and_hull(batch in matrix(1..20, 4), ws in prop::collection::vec(0.0..1.0f64, 20), eps in 0.0..0.01f64, delta in 0.0..0.01f64) {
        let refs: Vec<&[f64]> = batch.iter().map(Vec::as_slice).collect();
        let w = &ws[..batch.len()];
        prop_assume!(w.iter().sum::<f64>() + eps > 0.0);
        let q = update_proposal(&proposal(4), &refs, w, eps, delta).unwrap();
        prop_assert!(q.std.iter().all(|s| *s >= delta.sqrt()));
        for d in 0..4 {
            let lo = batch.iter().map(|c| c[d]).fold(0.0, f64::min);
            let hi = batch.iter().map(|c| c[d]).fold(0.0, f64::max);
            prop_assert!(q.mean[d] >= lo - 1e-12 && q.mean[d] <= hi + 1e-12);
        }
        prop_assert_eq!(q.iteration, 1);
    }

    #[test]
    fn dct_embedding_ignores_offsets_and_is_linear(xs in matrix(5..40, 3), ys in matrix(40..41, 3), c in -3.0..3.0f64, k in 1usize..4) {
        let t = xs.len();
        let e = DctEmbedder::new(t, k).unwrap();
        let shifted: Vec<Vec<f64>> = xs.iter().map(|r| r.iter().map(|v| v + c).collect()).collect();
        let (a, b) = (e.embed(&xs).unwrap(), e.embed(&shifted).unwrap());
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-10));
        let ys = &ys[..t];
        let sum: Vec<Vec<f64>> = xs.iter().zip(ys).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + 2.0 * q).collect()).collect();
        let (s, y) = (e.embed(&sum).unwrap(), e.embed(ys).unwrap());
        for i in 0..s.len() {
            prop_assert!((s[i] - a[i] - 2.0 * y[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn greedy_dpp_gains_do_not_increase(emb in matrix(2..14, 3), m in 1usize..14, sigma in 0.2..3.0f64) {
        let k = build_kernel(&emb, sigma).unwrap();
        let sel = dpp_select_greedy(&k, m, 1e-6).unwrap();
        prop_assert!(sel.indices.len() <= m.min(emb.len()));
        let mut sorted = sel.indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), sel.indices.len());
        prop_assert!(sel.gains.windows(2).all(|g| g[1] <= g[0] + 1e-12));
    }

    #[test]
    fn risky_states_respect_budget_and_spacing(
        risks in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 30), 1..6),
        chunk in 1usize..10,
        k_rel in 0usize..12,
        min_sep in 1usize..12,
    ) {
        let pts = select_risky_states(&risks, 30, chunk, k_rel, min_sep).unwrap();
        prop_assert!(pts.len() <= k_rel);
        prop_assert!(pts.iter().all(|p| p.timestep + chunk <= 30));
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                if a.trajectory == b.trajectory {
                    prop_assert!(a.timestep.abs_diff(b.timestep) >= min_sep);
                }
            }
        }
    }

    #[test]
    fn cem_best_cost_never_increases(seed_value in 0u64..1000, dim in 1usize..8) {
        let cfg = CemConfig { population: 16, iterations: 10, ..CemConfig::default() };
        let target: Vec<f64> = (0..dim).map(|i| (i as f64 * 0.37).sin()).collect();
        let cost = |x: &[f64]| Ok(x.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum::<f64>());
        let mut rng = seed::rng(seed_value);
        let res = cem_minimize(&vec![0.0; dim], &vec![0.5; dim], None, &cfg, cost, &mut rng).unwrap();
        prop_assert!(res.history.windows(2).all(|h| h[1] <= h[0]));
        prop_assert_eq!(res.history.last().copied(), Some(res.best_cost));
    }

    #[test]
    fn rollouts_are_deterministic_and_clamped(raw in matrix(60..61, 4), scale in 0.5..3.0f64, friction in 0.8..1.2f64) {
        let env = EnvConfig::by_name("planar_block_rotate").unwrap().build().unwrap();
        let s0 = env.reset(&Pose::planar(0.0, 0.0, 0.1));
        let plan: Vec<Vec<f64>> = raw.iter().map(|a| a.iter().map(|v| v * scale).collect()).collect();
        let params = EnvParams { mass: 1.0, friction_scale: friction };
        let a = rollout(env.as_ref(), &s0, &plan, params).unwrap();
        let b = rollout(env.as_ref(), &s0, &plan, params).unwrap();
        prop_assert_eq!(&a, &b);
        let limit = env.action_limit();
        let step = BlockRotateConfig::default().a_max;
        for (t, w) in a.states.windows(2).enumerate() {
            for i in 0..4 {
                let moved = (w[1][3 + i] - w[0][3 + i]).abs();
                prop_assert!(moved <= limit[i] * step + 1e-15, "step {t} moved {moved}");
            }
        }
    }
}
