//! Synthetic multi-user touch gestures with a tunable inter-user separation.
//!
//! Each user profile places its parameters on an evenly spaced grid (one
//! slot per user, a different slot permutation per parameter), shrunk
//! towards a shared centre by `separation`. Trajectories are low-frequency
//! sinusoids with curvature drift and a per-user tremor; pressure is AR(1)
//! noise around the user mean and contact area follows pressure.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::{GestureSample, TouchRow};
use crate::error::{Error, Result};

pub const MIN_SAMPLE_LEN: usize = 8;

const PRESSURE_RANGE: (f64, f64) = (0.3, 0.9);
const SPEED_RANGE: (f64, f64) = (0.5, 1.6);
const CURVATURE_RANGE: (f64, f64) = (-1.0, 1.0);
const TREMOR_RANGE: (f64, f64) = (2.0, 9.0);
const AREA_RANGE: (f64, f64) = (0.2, 0.6);
const JITTER_RANGE: (f64, f64) = (0.02, 0.08);
const PRESSURE_AR: f64 = 0.8;
const BASE_DT_MS: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct UserProfile {
    pub user_id: String,
    pub pressure_mean: f64,
    pub pressure_jitter: f64,
    pub speed_scale: f64,
    pub curvature: f64,
    pub tremor_freq: f64,
    pub area_mean: f64,
    pub seed: u64,
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a combined word
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn place(range: (f64, f64), slot: usize, n_users: usize, separation: f64) -> f64 {
    let centre = 0.5 * (range.0 + range.1);
    let grid = if n_users <= 1 {
        centre
    } else {
        let f = slot as f64 / (n_users - 1) as f64;
        (1.0 - f) * range.0 + f * range.1
    };
    (1.0 - separation) * centre + separation * grid
}

/// Profile of user `index` out of `n_users`.
///
/// Parameter means sit on a grid spread by `separation ∈ [0, 1]`; at 0 every
/// user shares the same means. The slot permutations come from `seed`, so a
/// population generated with one seed is internally consistent.
pub fn gen_user(index: usize, n_users: usize, separation: f64, seed: u64) -> Result<UserProfile> {
    if index >= n_users {
        return Err(Error::Param(format!("user index {index} >= population {n_users}")));
    }
    if !(0.0..=1.0).contains(&separation) {
        return Err(Error::Param(format!("separation {separation} outside [0, 1]")));
    }
    let slot = |param: u64| {
        let mut perm: Vec<usize> = (0..n_users).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, param)));
        perm[index]
    };
    Ok(UserProfile {
        user_id: format!("user{index:03}"),
        // pressure keeps the identity slot so its grid spacing is exact
        pressure_mean: place(PRESSURE_RANGE, index, n_users, separation),
        pressure_jitter: place(JITTER_RANGE, slot(1), n_users, separation),
        speed_scale: place(SPEED_RANGE, slot(2), n_users, separation),
        curvature: place(CURVATURE_RANGE, slot(3), n_users, separation),
        tremor_freq: place(TREMOR_RANGE, slot(4), n_users, separation),
        area_mean: place(AREA_RANGE, slot(5), n_users, separation),
        seed: mix(seed, 1000 + index as u64),
    })
}

/// One gesture of `len` rows drawn from `profile`; `sample_seed`
/// selects the per-sample randomness.
pub fn gen_sample(profile: &UserProfile, len: usize, sample_seed: u64, sample_id: &str) -> Result<GestureSample> {
    if len < MIN_SAMPLE_LEN {
        return Err(Error::Param(format!("sample length {len} < {MIN_SAMPLE_LEN}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(profile.seed, sample_seed));
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let n = move |rng: &mut ChaCha8Rng| std.sample(rng);

    let dt = BASE_DT_MS / profile.speed_scale.sqrt();
    let amp = 40.0 * profile.speed_scale * (1.0 + 0.05 * n(&mut rng));
    let phase = rng.random_range(0.0..2.0 * PI);
    let heading = rng.random_range(0.0..2.0 * PI);
    let (x0, y0) = (rng.random_range(100.0..900.0), rng.random_range(200.0..1600.0));
    let tremor_amp = 1.5 * (1.0 + 0.1 * n(&mut rng));
    let p_noise = profile.pressure_jitter * (1.0 - PRESSURE_AR * PRESSURE_AR).sqrt();

    let mut rows = Vec::with_capacity(len);
    let mut t = rng.random_range(0.0..1000.0f64).round();
    let mut p = profile.pressure_mean + profile.pressure_jitter * n(&mut rng);
    for i in 0..len {
        let s = i as f64 / (len - 1) as f64;
        let along = amp * (s * 2.0 * PI + phase).sin() + 6.0 * amp * s;
        let across = profile.curvature * amp * s * s * 3.0;
        let secs = t / 1000.0;
        let tremor = tremor_amp * (2.0 * PI * profile.tremor_freq * secs * 4.0).sin();
        let (c, sn) = (heading.cos(), heading.sin());
        let x = x0 + c * along - sn * (across + tremor) + 0.3 * n(&mut rng);
        let y = y0 + sn * along + c * (across + tremor) + 0.3 * n(&mut rng);
        let area = profile.area_mean + 0.5 * (p - profile.pressure_mean) + 0.01 * n(&mut rng);
        rows.push(TouchRow {
            t,
            x,
            y,
            p,
            a: area,
        });
        t += (dt * (1.0 + 0.1 * n(&mut rng))).max(1.0).round();
        p = profile.pressure_mean + PRESSURE_AR * (p - profile.pressure_mean) + p_noise * n(&mut rng);
    }
    Ok(GestureSample {
        user_id: profile.user_id.clone(),
        sample_id: sample_id.to_string(),
        rows,
    })
}

/// `n_users × samples_per_user` gestures with lengths uniform in `len_range`
/// (inclusive), user-major order.
pub fn gen_dataset(
    n_users: usize,
    samples_per_user: usize,
    len_range: (usize, usize),
    separation: f64,
    seed: u64,
) -> Result<Vec<GestureSample>> {
    if n_users < 2 {
        return Err(Error::Param(format!("need at least 2 users, got {n_users}")));
    }
    let (lo, hi) = len_range;
    if lo < MIN_SAMPLE_LEN || hi < lo {
        return Err(Error::Param(format!("invalid length range {lo}..={hi}")));
    }
    let mut len_rng = ChaCha8Rng::seed_from_u64(mix(seed, 7));
    let mut out = Vec::with_capacity(n_users * samples_per_user);
    for u in 0..n_users {
        let profile = gen_user(u, n_users, separation, seed)?;
        for s in 0..samples_per_user {
            let len = len_rng.random_range(lo..=hi);
            out.push(gen_sample(&profile, len, s as u64, &format!("s{s:04}"))?);
        }
    }
    Ok(out)
}
