//! Metric invariants under fuzzing: bounds, dominance relations, and the
//! noise monotonicity of nDTW.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssm_nav::env::{generate_environment, make_episode, EnvParams, EpisodeParams, Geodesics};
use ssm_nav::metrics::{score_trajectory, DistanceMode};
use ssm_nav::types::NodeId;

fn setup(seed: u64) -> (ssm_nav::EnvironmentGraph, Geodesics) {
    let env = generate_environment(
        seed,
        &EnvParams {
            n_nodes: 25,
            d_f: 6,
            tiling: 1,
            ..Default::default()
        },
    )
    .unwrap();
    let geo = Geodesics::new(&env);
    (env, geo)
}

/// Random connected walk of `len` hops starting at `start`.
fn random_walk(
    env: &ssm_nav::EnvironmentGraph,
    start: NodeId,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<NodeId> {
    let mut path = vec![start];
    let mut at = start;
    for _ in 0..len {
        let nbrs: Vec<NodeId> = env.nav[&at].iter().copied().collect();
        at = nbrs[rng.gen_range(0..nbrs.len())];
        path.push(at);
    }
    path
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bounded_metrics_stay_in_unit_interval(
        env_seed in 0u64..20,
        ep_seed in 0u64..50,
        walk_seed in 0u64..1000,
        walk_len in 0usize..30,
    ) {
        let (env, geo) = setup(8100 + env_seed);
        let Ok(ep) = make_episode(&env, &geo, ep_seed, &EpisodeParams::default()) else {
            return Ok(());
        };
        let mut rng = ChaCha8Rng::seed_from_u64(walk_seed);
        let path = random_walk(&env, ep.start, walk_len, &mut rng);
        for mode in [DistanceMode::Geodesic, DistanceMode::Euclidean] {
            let s = score_trajectory(&env, &geo, &ep, &path, mode);
            for (name, v) in [
                ("sr", s.sr), ("or", s.or_rate), ("spl", s.spl),
                ("cls", s.cls), ("ndtw", s.ndtw), ("sdtw", s.sdtw),
            ] {
                prop_assert!((0.0..=1.0).contains(&v), "{name} = {v} out of range");
            }
            prop_assert!(s.ne >= 0.0 && s.tl >= 0.0);
            prop_assert!(s.sdtw <= s.ndtw + 1e-12);
            prop_assert!(s.sdtw <= s.sr + 1e-12);
            prop_assert!(s.spl <= s.sr + 1e-12);
            prop_assert!(s.or_rate >= s.sr);
        }
    }
}

#[test]
fn ndtw_decreases_as_paths_get_noisier() {
    // Statistical check: mean nDTW of walks that follow the reference with
    // increasing random detours must be non-increasing.
    let (env, geo) = setup(8200);
    let mut mean_at_noise = Vec::new();
    for noise_hops in [0usize, 2, 6, 12] {
        let mut total = 0.0;
        let mut count = 0;
        for ep_seed in 0..30u64 {
            let Ok(ep) = make_episode(&env, &geo, ep_seed, &EpisodeParams::default()) else {
                continue;
            };
            let mut rng = ChaCha8Rng::seed_from_u64(ep_seed * 7 + noise_hops as u64);
            // Follow the reference but insert `noise_hops` random detours.
            let mut path = Vec::new();
            for &n in &ep.gt_path {
                path.push(n);
            }
            for _ in 0..noise_hops {
                let i = rng.gen_range(0..path.len());
                let at = path[i];
                let nbrs: Vec<NodeId> = env.nav[&at].iter().copied().collect();
                let detour = nbrs[rng.gen_range(0..nbrs.len())];
                path.insert(i + 1, detour);
                path.insert(i + 2, at);
            }
            let s = score_trajectory(&env, &geo, &ep, &path, DistanceMode::Geodesic);
            total += s.ndtw;
            count += 1;
        }
        mean_at_noise.push(total / count as f64);
    }
    for w in mean_at_noise.windows(2) {
        assert!(
            w[1] <= w[0] + 1e-9,
            "nDTW must not increase with noise: {mean_at_noise:?}"
        );
    }
}
