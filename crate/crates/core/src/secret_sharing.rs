//! (n, k) threshold sharing of byte strings.
//!
//! Shamir's scheme runs one polynomial per byte offset over [`Gf256`], with
//! the same x-coordinate for a share at every offset. The secret lives at
//! x = 0. The XOR scheme is the (n, n) special case used by the simple
//! protocol, where the secret is the XOR of all shares.
//!
//! Interpolation goes through Lagrange weights computed once per subset and
//! target coordinate; each weight is then applied to a whole share with a
//! single [`MulRow`] pass.

use std::collections::HashSet;

use rayon::prelude::*;
use thiserror::Error;

use crate::auth_tags::{TagKey, TAG_KEY_LEN};
use crate::finite_field::{Gf256, MulRow};

/// Offsets per work unit in [`Interpolator::par_evaluate`].
const PAR_CHUNK: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SharingError {
    #[error("duplicate x-coordinate {0}")]
    DuplicateCoordinate(Gf256),
    #[error("x-coordinate 0 is reserved for the secret")]
    ZeroCoordinate,
    #[error("share lengths differ ({expected} vs {found})")]
    LengthMismatch { expected: usize, found: usize },
    #[error("need {need} shares, have {have}")]
    InsufficientShares { have: usize, need: usize },
    #[error("bad scheme parameters: {0}")]
    BadParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Shamir,
    Xor,
}

impl SchemeKind {
    pub fn code(self) -> u8 {
        match self {
            SchemeKind::Shamir => 0,
            SchemeKind::Xor => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SchemeKind::Shamir),
            1 => Some(SchemeKind::Xor),
            _ => None,
        }
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shamir" => Ok(SchemeKind::Shamir),
            "xor" => Ok(SchemeKind::Xor),
            other => Err(format!("unknown scheme {other:?}")),
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SchemeKind::Shamir => "shamir",
            SchemeKind::Xor => "xor",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SchemeParams {
    n: u16,
    k: u16,
    kind: SchemeKind,
}

impl SchemeParams {
    pub fn new(n: u16, k: u16, kind: SchemeKind) -> Result<Self, SharingError> {
        if k == 0 || k > n {
            return Err(SharingError::BadParams(format!("need 1 <= k <= n, got n={n} k={k}")));
        }
        match kind {
            SchemeKind::Xor if k != n => {
                Err(SharingError::BadParams(format!("xor scheme needs k = n, got n={n} k={k}")))
            }
            SchemeKind::Shamir if n >= 256 => {
                Err(SharingError::BadParams(format!("shamir over GF(2^8) needs n < 256, got {n}")))
            }
            _ => Ok(SchemeParams { n, k, kind }),
        }
    }

    pub fn shamir(n: u16, k: u16) -> Result<Self, SharingError> {
        Self::new(n, k, SchemeKind::Shamir)
    }

    pub fn xor(n: u16) -> Result<Self, SharingError> {
        Self::new(n, n, SchemeKind::Xor)
    }

    pub fn n(&self) -> usize {
        self.n as usize
    }

    pub fn k(&self) -> usize {
        self.k as usize
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Share {
    pub x: Gf256,
    pub data: Vec<u8>,
}

impl Share {
    pub fn new(x: u8, data: impl Into<Vec<u8>>) -> Self {
        Share { x: Gf256(x), data: data.into() }
    }
}

/// The reconstructed secret Y_0: an l-byte tag key u followed by the key S.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretBundle {
    secret: Vec<u8>,
}

impl std::fmt::Debug for SecretBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecretBundle").field("len", &self.secret.len()).finish_non_exhaustive()
    }
}

impl SecretBundle {
    pub fn new(secret: Vec<u8>) -> Self {
        SecretBundle { secret }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.secret
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.secret
    }

    pub fn len(&self) -> usize {
        self.secret.len()
    }

    pub fn is_empty(&self) -> bool {
        self.secret.is_empty()
    }

    /// Splits Y_0 into (u, S); `None` when the secret is shorter than l.
    pub fn partition(&self) -> Option<(&[u8], &[u8])> {
        if self.secret.len() < TAG_KEY_LEN {
            return None;
        }
        Some(self.secret.split_at(TAG_KEY_LEN))
    }

    pub fn tag_key(&self) -> Option<TagKey> {
        self.partition().map(|(u, _)| TagKey::from_bytes(u))
    }

    /// The agreed key S (empty if Y_0 is shorter than l).
    pub fn key_bits(&self) -> &[u8] {
        self.partition().map(|(_, s)| s).unwrap_or(&[])
    }
}

/// Lagrange interpolation through a fixed set of x-coordinates.
#[derive(Debug, Clone)]
pub struct Interpolator {
    xs: Vec<Gf256>,
}

impl Interpolator {
    pub fn new(xs: &[Gf256]) -> Result<Self, SharingError> {
        check_coordinates(xs.iter().copied())?;
        Ok(Interpolator { xs: xs.to_vec() })
    }

    /// Like [`Interpolator::new`] but allows a point at x = 0, for
    /// polynomials constrained by a chosen secret.
    pub fn through_secret(xs: &[Gf256]) -> Result<Self, SharingError> {
        let mut seen = HashSet::new();
        if let Some(&dup) = xs.iter().find(|&&x| !seen.insert(x)) {
            return Err(SharingError::DuplicateCoordinate(dup));
        }
        Ok(Interpolator { xs: xs.to_vec() })
    }

    pub fn xs(&self) -> &[Gf256] {
        &self.xs
    }

    /// Basis values L_j(t) for every known coordinate x_j.
    pub fn weights_at(&self, t: Gf256) -> Vec<Gf256> {
        self.xs
            .iter()
            .enumerate()
            .map(|(j, &xj)| {
                let mut num = Gf256::ONE;
                let mut den = Gf256::ONE;
                for (i, &xi) in self.xs.iter().enumerate() {
                    if i != j {
                        num *= t + xi;
                        den *= xj + xi;
                    }
                }
                // den is nonzero: coordinates are distinct
                num * den.inv().expect("distinct coordinates")
            })
            .collect()
    }

    /// Evaluates the per-offset polynomials through `ys` at `t`.
    pub fn evaluate(&self, ys: &[&[u8]], t: Gf256) -> Vec<u8> {
        let len = ys.first().map_or(0, |y| y.len());
        let mut out = vec![0u8; len];
        let weights = self.weights_at(t);
        let rows = weight_rows(&weights);
        accumulate(&mut out, ys, &weights, &rows, 0);
        out
    }

    /// Same result as [`Interpolator::evaluate`], split across offset chunks.
    pub fn par_evaluate(&self, ys: &[&[u8]], t: Gf256) -> Vec<u8> {
        let len = ys.first().map_or(0, |y| y.len());
        let mut out = vec![0u8; len];
        let weights = self.weights_at(t);
        let rows = weight_rows(&weights);
        out.par_chunks_mut(PAR_CHUNK).enumerate().for_each(|(c, chunk)| {
            accumulate(chunk, ys, &weights, &rows, c * PAR_CHUNK);
        });
        out
    }
}

fn weight_rows(weights: &[Gf256]) -> Vec<Option<MulRow>> {
    weights
        .iter()
        .map(|&w| if w.value() > 1 { Some(MulRow::new(w)) } else { None })
        .collect()
}

fn accumulate(out: &mut [u8], ys: &[&[u8]], weights: &[Gf256], rows: &[Option<MulRow>], start: usize) {
    let end = start + out.len();
    for ((y, &w), row) in ys.iter().zip(weights).zip(rows) {
        let src = &y[start..end];
        match (w.value(), row) {
            (0, _) => {}
            (1, _) => out.iter_mut().zip(src).for_each(|(o, s)| *o ^= s),
            (_, Some(row)) => row.mul_add_into(out, src),
            (_, None) => unreachable!(),
        }
    }
}

fn check_coordinates(xs: impl IntoIterator<Item = Gf256>) -> Result<(), SharingError> {
    let mut seen = HashSet::new();
    for x in xs {
        if x.is_zero() {
            return Err(SharingError::ZeroCoordinate);
        }
        if !seen.insert(x) {
            return Err(SharingError::DuplicateCoordinate(x));
        }
    }
    Ok(())
}

fn check_lengths(shares: &[Share]) -> Result<usize, SharingError> {
    let expected = shares.first().map_or(0, |s| s.data.len());
    for s in shares {
        if s.data.len() != expected {
            return Err(SharingError::LengthMismatch { expected, found: s.data.len() });
        }
    }
    Ok(expected)
}

fn xor_all(shares: &[Share], len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    for s in shares {
        out.iter_mut().zip(&s.data).for_each(|(o, d)| *o ^= d);
    }
    out
}

/// The `n - k` hub coordinates (from 1..=n, then upwards) not already fixed.
fn free_coordinates(params: &SchemeParams, fixed: &[Share]) -> Vec<Gf256> {
    let taken: HashSet<u8> = fixed.iter().map(|s| s.x.value()).collect();
    (1..=255u8)
        .filter(|x| !taken.contains(x))
        .take(params.n() - params.k())
        .map(Gf256)
        .collect()
}

/// Extends exactly `k` fixed shares to all `n` shares and the secret at x = 0.
///
/// Output shares are sorted by x-coordinate.
pub fn complete_shares(params: &SchemeParams, fixed: &[Share]) -> Result<(Vec<Share>, SecretBundle), SharingError> {
    if fixed.len() != params.k() {
        return Err(SharingError::BadParams(format!(
            "expected {} fixed shares, got {}",
            params.k(),
            fixed.len()
        )));
    }
    check_coordinates(fixed.iter().map(|s| s.x))?;
    let len = check_lengths(fixed)?;

    let mut all = fixed.to_vec();
    let secret = match params.kind() {
        SchemeKind::Xor => xor_all(fixed, len),
        SchemeKind::Shamir => {
            let xs: Vec<Gf256> = fixed.iter().map(|s| s.x).collect();
            let interp = Interpolator::new(&xs)?;
            let ys: Vec<&[u8]> = fixed.iter().map(|s| s.data.as_slice()).collect();
            for x in free_coordinates(params, fixed) {
                all.push(Share { x, data: interp.evaluate(&ys, x) });
            }
            interp.evaluate(&ys, Gf256::ZERO)
        }
    };
    all.sort_by_key(|s| s.x);
    Ok((all, SecretBundle::new(secret)))
}

fn threshold_subset<'a>(params: &SchemeParams, subset: &'a [Share]) -> Result<&'a [Share], SharingError> {
    if subset.len() < params.k() {
        return Err(SharingError::InsufficientShares { have: subset.len(), need: params.k() });
    }
    check_coordinates(subset.iter().map(|s| s.x))?;
    check_lengths(subset)?;
    Ok(match params.kind() {
        SchemeKind::Shamir => &subset[..params.k()],
        SchemeKind::Xor => subset,
    })
}

/// Recovers the secret from at least `k` shares.
pub fn reconstruct(params: &SchemeParams, subset: &[Share]) -> Result<SecretBundle, SharingError> {
    let used = threshold_subset(params, subset)?;
    let len = used[0].data.len();
    let secret = match params.kind() {
        SchemeKind::Xor => xor_all(used, len),
        SchemeKind::Shamir => {
            let xs: Vec<Gf256> = used.iter().map(|s| s.x).collect();
            let ys: Vec<&[u8]> = used.iter().map(|s| s.data.as_slice()).collect();
            Interpolator::new(&xs)?.evaluate(&ys, Gf256::ZERO)
        }
    };
    Ok(SecretBundle::new(secret))
}

/// Predicted shares at every hub coordinate 1..=n from `k` known shares.
pub fn derive_other_shares(params: &SchemeParams, subset: &[Share]) -> Result<Vec<Share>, SharingError> {
    let used = threshold_subset(params, subset)?;
    match params.kind() {
        SchemeKind::Xor => Ok(used.to_vec()),
        SchemeKind::Shamir => {
            let xs: Vec<Gf256> = used.iter().map(|s| s.x).collect();
            let ys: Vec<&[u8]> = used.iter().map(|s| s.data.as_slice()).collect();
            let interp = Interpolator::new(&xs)?;
            Ok((1..=params.n() as u8)
                .map(|x| {
                    let x = Gf256(x);
                    match used.iter().find(|s| s.x == x) {
                        Some(s) => s.clone(),
                        None => Share { x, data: interp.evaluate(&ys, x) },
                    }
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Independent route: solve the Vandermonde system for the coefficient
    // vector by Gauss-Jordan elimination, then evaluate with Horner's rule.
    fn vandermonde_eval(points: &[(u8, u8)], t: u8) -> u8 {
        let k = points.len();
        let mut m: Vec<Vec<Gf256>> = points
            .iter()
            .map(|&(x, y)| {
                let mut row: Vec<Gf256> = (0..k as u32).map(|e| Gf256(x).pow(e)).collect();
                row.push(Gf256(y));
                row
            })
            .collect();
        for col in 0..k {
            let pivot = (col..k).find(|&r| !m[r][col].is_zero()).unwrap();
            m.swap(col, pivot);
            let inv = m[col][col].inv().unwrap();
            for v in m[col].iter_mut() {
                *v *= inv;
            }
            for r in 0..k {
                if r != col && !m[r][col].is_zero() {
                    let f = m[r][col];
                    let pivot_row = m[col].clone();
                    for (v, p) in m[r].iter_mut().zip(pivot_row) {
                        *v += f * p;
                    }
                }
            }
        }
        let coeffs: Vec<Gf256> = m.iter().map(|row| row[k]).collect();
        coeffs.iter().rev().fold(Gf256::ZERO, |acc, &c| acc * Gf256(t) + c).value()
    }

    #[test]
    fn vandermonde_oracle_line_example() {
        // y(x) = 0x2A + x
        assert_eq!(vandermonde_eval(&[(1, 0x2B), (2, 0x28)], 3), 0x29);
        assert_eq!(vandermonde_eval(&[(1, 0x2B), (2, 0x28)], 0), 0x2A);
    }

    #[test]
    fn complete_shares_examples() {
        let p = SchemeParams::shamir(3, 2).unwrap();
        let (all, secret) = complete_shares(&p, &[Share::new(1, [0x2B]), Share::new(2, [0x28])]).unwrap();
        assert_eq!(all[2], Share::new(3, [0x29]));
        assert_eq!(secret.as_bytes(), &[0x2A]);

        let p = SchemeParams::xor(2).unwrap();
        let (_, secret) = complete_shares(&p, &[Share::new(1, [0x0F]), Share::new(2, [0xF0])]).unwrap();
        assert_eq!(secret.as_bytes(), &[0xFF]);

        let p = SchemeParams::shamir(1, 1).unwrap();
        let data = vec![7u8, 8, 9];
        let (all, secret) = complete_shares(&p, &[Share::new(1, data.clone())]).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(secret.as_bytes(), data.as_slice());
    }

    #[test]
    fn complete_shares_errors() {
        let p = SchemeParams::shamir(3, 2).unwrap();
        assert_eq!(
            complete_shares(&p, &[Share::new(1, [1]), Share::new(1, [2])]),
            Err(SharingError::DuplicateCoordinate(Gf256(1)))
        );
        assert!(matches!(
            complete_shares(&p, &[Share::new(1, [1]), Share::new(2, [2, 3])]),
            Err(SharingError::LengthMismatch { .. })
        ));
        assert!(matches!(complete_shares(&p, &[Share::new(1, [1])]), Err(SharingError::BadParams(_))));
        assert_eq!(
            complete_shares(&p, &[Share::new(0, [1]), Share::new(2, [2])]),
            Err(SharingError::ZeroCoordinate)
        );
    }

    #[test]
    fn reconstruct_examples() {
        let p = SchemeParams::shamir(3, 2).unwrap();
        let s = reconstruct(&p, &[Share::new(2, [0x28]), Share::new(3, [0x29])]).unwrap();
        assert_eq!(s.as_bytes(), &[0x2A]);

        let p = SchemeParams::xor(2).unwrap();
        let s = reconstruct(&p, &[Share::new(1, [0xAA]), Share::new(2, [0xAA])]).unwrap();
        assert_eq!(s.as_bytes(), &[0x00]);

        let p = SchemeParams::shamir(3, 2).unwrap();
        assert_eq!(
            reconstruct(&p, &[Share::new(1, [0x2B])]),
            Err(SharingError::InsufficientShares { have: 1, need: 2 })
        );
    }

    #[test]
    fn derive_other_shares_examples() {
        let p = SchemeParams::shamir(3, 2).unwrap();
        let all = derive_other_shares(&p, &[Share::new(1, [0x2B]), Share::new(2, [0x28])]).unwrap();
        assert_eq!(all[2], Share::new(3, [0x29]));

        let p = SchemeParams::xor(2).unwrap();
        let input = vec![Share::new(1, [1, 2]), Share::new(2, [3, 4])];
        assert_eq!(derive_other_shares(&p, &input).unwrap(), input);

        let p = SchemeParams::shamir(3, 2).unwrap();
        assert!(matches!(
            derive_other_shares(&p, &[Share::new(1, [1]), Share::new(2, [1, 2])]),
            Err(SharingError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn params_validation() {
        assert!(SchemeParams::shamir(3, 0).is_err());
        assert!(SchemeParams::shamir(3, 4).is_err());
        assert!(SchemeParams::new(3, 2, SchemeKind::Xor).is_err());
        assert!(SchemeParams::shamir(256, 2).is_err());
        assert!(SchemeParams::shamir(255, 255).is_ok());
    }

    #[test]
    fn one_share_hides_the_secret() {
        let p = SchemeParams::shamir(3, 2).unwrap();
        for fixed in [0x00u8, 0x37, 0xFF] {
            for x_fixed in [1u8, 2, 3] {
                let x_other = if x_fixed == 1 { 2 } else { 1 };
                let mut hits = [0u32; 256];
                for v in 0..=255u8 {
                    let (_, s) =
                        complete_shares(&p, &[Share::new(x_fixed, [fixed]), Share::new(x_other, [v])]).unwrap();
                    hits[s.as_bytes()[0] as usize] += 1;
                }
                assert!(hits.iter().all(|&h| h == 1));
            }
        }
    }

    #[test]
    fn xor_and_shamir_agree_only_when_trivial() {
        let data = vec![0x11u8, 0x22];
        let (_, a) = complete_shares(&SchemeParams::xor(1).unwrap(), &[Share::new(1, data.clone())]).unwrap();
        let (_, b) = complete_shares(&SchemeParams::shamir(1, 1).unwrap(), &[Share::new(1, data)]).unwrap();
        assert_eq!(a, b);

        let fixed = [Share::new(1, [0x0F]), Share::new(2, [0xF0])];
        let (_, a) = complete_shares(&SchemeParams::xor(2).unwrap(), &fixed).unwrap();
        let (_, b) = complete_shares(&SchemeParams::shamir(2, 2).unwrap(), &fixed).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn parallel_evaluation_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ys: Vec<Vec<u8>> = (0..5).map(|_| (0..300_001).map(|_| rng.gen()).collect()).collect();
        let refs: Vec<&[u8]> = ys.iter().map(|y| y.as_slice()).collect();
        let xs: Vec<Gf256> = (1..=5).map(Gf256).collect();
        let interp = Interpolator::new(&xs).unwrap();
        for t in [0u8, 6, 200] {
            assert_eq!(interp.evaluate(&refs, Gf256(t)), interp.par_evaluate(&refs, Gf256(t)));
        }
    }

    fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
        fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if cur.len() == k {
                out.push(cur.clone());
                return;
            }
            for i in start..n {
                cur.push(i);
                rec(i + 1, n, k, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(0, n, k, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn every_k_subset_reconstructs_for_small_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=8u16 {
            for k in 1..=n {
                let p = SchemeParams::shamir(n, k).unwrap();
                let fixed: Vec<Share> =
                    (1..=k as u8).map(|x| Share::new(x, (0..4).map(|_| rng.gen()).collect::<Vec<u8>>())).collect();
                let (all, secret) = complete_shares(&p, &fixed).unwrap();
                assert_eq!(all.len(), n as usize);
                for subset in subsets(n as usize, k as usize) {
                    let chosen: Vec<Share> = subset.iter().map(|&i| all[i].clone()).collect();
                    assert_eq!(reconstruct(&p, &chosen).unwrap(), secret, "n={n} k={k} {subset:?}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn interpolation_matches_vandermonde_oracle(
            ys in proptest::collection::vec(any::<u8>(), 1..8),
            t in any::<u8>(),
        ) {
            let points: Vec<(u8, u8)> = ys.iter().enumerate().map(|(i, &y)| (i as u8 + 1, y)).collect();
            let xs: Vec<Gf256> = points.iter().map(|&(x, _)| Gf256(x)).collect();
            let data: Vec<Vec<u8>> = points.iter().map(|&(_, y)| vec![y]).collect();
            let refs: Vec<&[u8]> = data.iter().map(|d| d.as_slice()).collect();
            let got = Interpolator::new(&xs).unwrap().evaluate(&refs, Gf256(t));
            prop_assert_eq!(got[0], vandermonde_eval(&points, t));
        }

        #[test]
        fn round_trip_random_subsets(
            n in 1u16..=20,
            k_frac in 0.0f64..1.0,
            seed: u64,
            len in 1usize..40,
        ) {
            let k = 1 + ((n - 1) as f64 * k_frac) as u16;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = SchemeParams::shamir(n, k).unwrap();
            let fixed: Vec<Share> = (1..=k as u8)
                .map(|x| Share::new(x, (0..len).map(|_| rng.gen()).collect::<Vec<u8>>()))
                .collect();
            let (mut all, secret) = complete_shares(&p, &fixed).unwrap();
            for i in (1..all.len()).rev() {
                let j = rng.gen_range(0..=i);
                all.swap(i, j);
            }
            prop_assert_eq!(reconstruct(&p, &all[..k as usize]).unwrap(), secret.clone());
            let predicted = derive_other_shares(&p, &all[..k as usize]).unwrap();
            for s in &all {
                prop_assert!(predicted.contains(s));
            }
        }

        #[test]
        fn xor_round_trip(n in 1u16..=12, seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = SchemeParams::xor(n).unwrap();
            let fixed: Vec<Share> = (1..=n as u8).map(|x| Share::new(x, vec![rng.gen::<u8>(); 3])).collect();
            let (all, secret) = complete_shares(&p, &fixed).unwrap();
            prop_assert_eq!(reconstruct(&p, &all).unwrap(), secret);
        }
    }
}
