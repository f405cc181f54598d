//! Share-processing benchmark.
//!
//! Times the initiator's share generation (completing n shares from k table
//! pads plus the key tag) and the responder's reconstruction and validation
//! over s received shares, some of which may carry corrupted data under a
//! valid message tag (as a compromised hub would send). Shares corrupted in
//! transit never reach validation; they just lower s. Network and table
//! costs are left out.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use dske::auth_tags::{compute_tag, TAG_KEY_LEN};
use dske::client::{validate_shares, ReceivedShare, ReceiverPolicy};
use dske::ids::{KeyId, PartyId};
use dske::secret_sharing::{complete_shares, SchemeKind, SchemeParams, Share};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// How many received shares carry corrupted data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Corruption {
    None,
    One,
    /// s - k: as many as reconstruction can tolerate.
    Many,
}

impl Corruption {
    pub fn count(self, s: usize, k: usize) -> usize {
        match self {
            Corruption::None => 0,
            Corruption::One => 1,
            Corruption::Many => s - k,
        }
    }
}

impl std::str::FromStr for Corruption {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Corruption::None),
            "one" => Ok(Corruption::One),
            "many" => Ok(Corruption::Many),
            other => Err(format!("unknown corruption level {other:?} (none, one, many)")),
        }
    }
}

/// Which received-share counts to sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Received {
    /// Every s in [k, n].
    All,
    /// s = n only.
    Full,
    /// s = k only.
    Threshold,
}

impl std::str::FromStr for Received {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all" => Ok(Received::All),
            "full" => Ok(Received::Full),
            "k" => Ok(Received::Threshold),
            other => Err(format!("unknown received-share mode {other:?} (all, full, k)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub m_bytes: usize,
    pub received: Received,
    pub corruption: Vec<Corruption>,
    /// Corrupted cases whose C(s, k) exceeds this are left out of the sweep.
    pub max_subsets: u64,
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n_min: 1,
            n_max: 20,
            k_min: 1,
            k_max: 20,
            m_bytes: 1 << 20,
            received: Received::All,
            corruption: vec![Corruption::None],
            max_subsets: 200,
            reps: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Combo {
    pub n: usize,
    pub k: usize,
    pub s: usize,
    pub corrupted: usize,
}

pub fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// The parameter combinations a sweep measures, in output order.
pub fn combos(cfg: &BenchConfig) -> Vec<Combo> {
    let mut out = Vec::new();
    for n in cfg.n_min.max(1)..=cfg.n_max.min(255) {
        for k in cfg.k_min.max(1)..=cfg.k_max.min(n) {
            let ss: Vec<usize> = match cfg.received {
                Received::All => (k..=n).collect(),
                Received::Full => vec![n],
                Received::Threshold => vec![k],
            };
            for s in ss {
                let mut counts: Vec<usize> = cfg.corruption.iter().map(|c| c.count(s, k)).collect();
                counts.sort_unstable();
                counts.dedup();
                for corrupted in counts {
                    if corrupted > s || (corrupted > 0 && binomial(s as u64, k as u64) > cfg.max_subsets) {
                        continue;
                    }
                    out.push(Combo { n, k, s, corrupted });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct Measurement {
    pub combo: Combo,
    pub m_bytes: usize,
    pub initiator: Duration,
    pub responder: Duration,
    pub agreed: bool,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

impl Measurement {
    fn mbit(&self) -> f64 {
        self.m_bytes as f64 * 8.0 / 1e6
    }

    pub fn initiator_ms_per_mbit(&self) -> f64 {
        ms(self.initiator) / self.mbit()
    }

    pub fn responder_ms_per_mbit(&self) -> f64 {
        ms(self.responder) / self.mbit()
    }
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort_unstable();
    v[v.len() / 2]
}

/// Measures one combination; timings are medians over `reps`.
pub fn measure(combo: Combo, m_bytes: usize, reps: usize, rng: &mut ChaCha20Rng) -> Measurement {
    let Combo { n, k, s, corrupted } = combo;
    let params = SchemeParams::shamir(n as u16, k as u16).expect("1 <= k <= n <= 255");
    let policy = ReceiverPolicy::new([], [], 1);
    let len = m_bytes + TAG_KEY_LEN;
    let mut initiator = Vec::with_capacity(reps);
    let mut responder = Vec::with_capacity(reps);
    let mut agreed = true;
    for _ in 0..reps.max(1) {
        let fixed: Vec<Share> = (1..=k as u8)
            .map(|x| {
                let mut pad = vec![0u8; len];
                rng.fill_bytes(&mut pad);
                Share::new(x, pad)
            })
            .collect();

        let start = Instant::now();
        let (shares, bundle) = complete_shares(&params, &fixed).expect("valid parameters");
        let key_tag = compute_tag(&bundle.tag_key().expect("tag key"), bundle.key_bits());
        initiator.push(start.elapsed());

        // The first `corrupted` shares are damaged, so the quick path fails
        // whenever anything is corrupted.
        let received: Vec<ReceivedShare> = shares
            .into_iter()
            .take(s)
            .enumerate()
            .map(|(i, mut share)| {
                if i < corrupted {
                    let pos = TAG_KEY_LEN + i % m_bytes.max(1);
                    if let Some(b) = share.data.get_mut(pos) {
                        *b ^= 0x5A;
                    }
                }
                ReceivedShare {
                    hub: PartyId::from_label(&format!("H{}", i + 1)),
                    sender: PartyId::from_label("alice"),
                    n: n as u16,
                    k: k as u16,
                    scheme: SchemeKind::Shamir,
                    key_tag: Some(key_tag),
                    share,
                }
            })
            .collect();

        let start = Instant::now();
        let result = validate_shares(KeyId::default(), &received, &policy);
        responder.push(start.elapsed());
        agreed &= result.is_agreed() && result.secret == bundle.key_bits();
    }
    Measurement { combo, m_bytes, initiator: median(initiator), responder: median(responder), agreed }
}

pub fn run(cfg: &BenchConfig) -> Vec<Measurement> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    combos(cfg).into_iter().map(|c| measure(c, cfg.m_bytes, cfg.reps, &mut rng)).collect()
}

pub const CSV_HEADER: &str =
    "n,k,s,corrupted,m_bytes,initiator_ms,responder_ms,initiator_ms_per_mbit,responder_ms_per_mbit,agreed";

pub fn to_csv(rows: &[Measurement]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let c = r.combo;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{}",
            c.n,
            c.k,
            c.s,
            c.corrupted,
            r.m_bytes,
            ms(r.initiator),
            ms(r.responder),
            r.initiator_ms_per_mbit(),
            r.responder_ms_per_mbit(),
            u8::from(r.agreed)
        );
    }
    out
}

/// A gnuplot script plotting the CSV written to `csv_name`.
pub fn gnuplot_script(csv_name: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set xlabel 'k'\n\
         set ylabel 'ms per Mbit'\n\
         set logscale y\n\
         plot '{csv_name}' using 2:(($4==0 && $3==$1) ? $8 : 1/0) with points title 'initiator (s = n)', \\\n\
         \x20    '{csv_name}' using 2:(($4==0 && $3==$1) ? $9 : 1/0) with points title 'responder (s = n)'\n"
    )
}

/// Least-squares fit of t = c * k^2 through the origin: (c, R^2).
pub fn fit_k_squared(points: &[(f64, f64)]) -> (f64, f64) {
    let sxx: f64 = points.iter().map(|(k, _)| k.powi(4)).sum();
    let sxy: f64 = points.iter().map(|(k, t)| k * k * t).sum();
    let c = sxy / sxx;
    let mean = points.iter().map(|(_, t)| t).sum::<f64>() / points.len() as f64;
    let ss_tot: f64 = points.iter().map(|(_, t)| (t - mean).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|(k, t)| (t - c * k * k).powi(2)).sum();
    (c, 1.0 - ss_res / ss_tot)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combos_cover_the_triangle() {
        let cfg = BenchConfig { n_max: 4, k_max: 4, ..BenchConfig::default() };
        // sum over n of n(n+1)/2
        assert_eq!(combos(&cfg).len(), 1 + 3 + 6 + 10);
        let full = BenchConfig { received: Received::Full, ..cfg.clone() };
        assert_eq!(combos(&full).len(), 10);
        let corrupt = BenchConfig { corruption: vec![Corruption::None, Corruption::One, Corruption::Many], ..cfg };
        for c in combos(&corrupt) {
            assert!(c.k <= c.s && c.s <= c.n && c.corrupted <= c.s);
        }
    }

    #[test]
    fn small_measurements_agree_unless_too_corrupted() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for (n, k, s, corrupted, ok) in [(3, 2, 3, 0, true), (5, 2, 5, 1, true), (5, 2, 5, 3, true), (4, 3, 3, 1, false)] {
            let m = measure(Combo { n, k, s, corrupted }, 256, 1, &mut rng);
            assert_eq!(m.agreed, ok, "n={n} k={k} s={s} c={corrupted}");
        }
    }

    #[test]
    fn fit_recovers_an_exact_square_law() {
        let pts: Vec<(f64, f64)> = (2..=20).map(|k| (k as f64, 3.0 * (k * k) as f64)).collect();
        let (c, r2) = fit_k_squared(&pts);
        assert!((c - 3.0).abs() < 1e-9);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(20, 10), 184_756);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(5, 5), 1);
    }

    #[test]
    fn csv_has_one_line_per_row() {
        let cfg = BenchConfig { n_max: 3, k_max: 3, m_bytes: 64, ..BenchConfig::default() };
        let rows = run(&cfg);
        let csv = to_csv(&rows);
        assert_eq!(csv.lines().count(), 1 + combos(&cfg).len());
        assert!(rows.iter().all(|r| r.agreed));
    }
}
