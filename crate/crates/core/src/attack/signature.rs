use super::AttackError;
use crate::blackbox::{ForecastQuery, Oracle, OracleError};
use crate::dataio::interval;
use crate::numerics::Tensor;
use crate::seed;
use chrono::{Datelike, NaiveDate, NaiveDateTime};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Parameters of the recursive querying that turns a black-box forecaster
/// into a fixed-size signature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureSpec {
    pub w: usize,
    /// Recursion depth: queries per seed date.
    pub tau: usize,
    /// Seed dates, ascending. The recursion for a date starts at its midnight.
    pub dates: Vec<NaiveDate>,
    /// Seed for the random initial windows.
    pub x0_seed: u64,
}

impl SignatureSpec {
    pub fn new(w: usize, tau: usize, mut dates: Vec<NaiveDate>, x0_seed: u64) -> Result<Self, AttackError> {
        dates.sort_unstable();
        let spec = Self { w, tau, dates, x0_seed };
        spec.validate()?;
        Ok(spec)
    }

    /// Draws `k` seed dates among the whole days in `[start, end]`, without
    /// replacement whenever the range holds at least `k` days.
    pub fn sample(
        w: usize,
        tau: usize,
        k: usize,
        range: (NaiveDateTime, NaiveDateTime),
        date_seed: u64,
        x0_seed: u64,
    ) -> Result<Self, AttackError> {
        let (start, end) = range;
        let first = if start.time() == chrono::NaiveTime::MIN {
            start.date()
        } else {
            start.date().succ_opt().expect("date in range")
        };
        let last = end.date();
        if k == 0 || last < first {
            return Err(AttackError::Spec(format!("cannot sample {k} dates from {start} .. {end}")));
        }
        let days = (last - first).num_days() as usize + 1;
        let mut rng = seed::rng(date_seed);
        let offsets: Vec<usize> = if days >= k {
            sample(&mut rng, days, k).into_vec()
        } else {
            (0..k).map(|_| rng.random_range(0..days)).collect()
        };
        let dates = offsets.into_iter().map(|o| first + chrono::Duration::days(o as i64)).collect();
        Self::new(w, tau, dates, x0_seed)
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.w < 2 || self.tau == 0 || self.dates.is_empty() {
            return Err(AttackError::Spec(format!(
                "need w >= 2, tau >= 1 and at least one date (w={}, tau={}, K={})",
                self.w,
                self.tau,
                self.dates.len()
            )));
        }
        if self.dates.windows(2).any(|p| p[1] < p[0]) {
            return Err(AttackError::Spec("dates must be ascending".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.dates.len()
    }

    pub fn queries_per_oracle(&self) -> u64 {
        (self.tau * self.k()) as u64
    }

    /// SHA-256 over the ISO dates, used to prove that offline and active
    /// stages saw the same dates.
    pub fn dates_hash(&self) -> String {
        let mut h = Sha256::new();
        for d in &self.dates {
            h.update(d.format("%Y-%m-%d").to_string().as_bytes());
            h.update(b"\n");
        }
        hex_digest(h.finalize().as_slice())
    }

    /// Initial window for `date`, uniform on `[0, 1)`.
    pub fn x0(&self, date: NaiveDate) -> Vec<f64> {
        let mut rng = seed::rng(seed::derive(self.x0_seed, date.num_days_from_ce() as u64));
        (0..self.w).map(|_| rng.random::<f64>()).collect()
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Maps raw predictions into the adversary's `[0, 1]` query space with a
/// running min-max whose bounds start at the query-space bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rescaler {
    lo: f64,
    hi: f64,
}

impl Default for Rescaler {
    fn default() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }
}

impl Rescaler {
    pub fn push(&mut self, v: f64) -> f64 {
        self.lo = self.lo.min(v);
        self.hi = self.hi.max(v);
        (v - self.lo) / (self.hi - self.lo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSignature {
    pub date: NaiveDate,
    pub values: Vec<f64>,
}

/// Runs the recursion for one date and returns every intermediate window
/// `x_1 .. x_tau`. Query ids are `id_base + n` for step `n`.
pub fn gen_signature_trace(
    oracle: &mut dyn Oracle,
    spec: &SignatureSpec,
    date: NaiveDate,
    id_base: u64,
) -> Result<Vec<Vec<f64>>, OracleError> {
    let midnight = date.and_time(chrono::NaiveTime::MIN);
    let mut window = spec.x0(date);
    let mut q = Rescaler::default();
    let mut trace = Vec::with_capacity(spec.tau);
    for n in 0..spec.tau {
        let start = midnight + interval() * n as i32;
        let query = ForecastQuery::starting_at(id_base + n as u64, window.clone(), start);
        let resp = oracle.query(&query)?;
        window.remove(0);
        window.push(q.push(resp.prediction));
        trace.push(window.clone());
    }
    Ok(trace)
}

/// The window left after `tau` recursive queries seeded at `date`.
pub fn gen_signature(oracle: &mut dyn Oracle, spec: &SignatureSpec, date: NaiveDate, id_base: u64) -> Result<ModelSignature, OracleError> {
    let trace = gen_signature_trace(oracle, spec, date, id_base)?;
    Ok(ModelSignature {
        date,
        values: trace.into_iter().last().expect("tau >= 1"),
    })
}

/// K signatures of one model, rows in ascending date order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureSet {
    /// Meter id of the shadow model, or `honest:<id>` for a target.
    pub source: String,
    pub w: usize,
    pub rows: Vec<ModelSignature>,
    /// Row indices whose recursion failed; those rows hold zeros.
    pub gaps: Vec<usize>,
}

impl SignatureSet {
    pub fn k(&self) -> usize {
        self.rows.len()
    }

    /// `[K, w]` matrix.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.rows.iter().flat_map(|r| r.values.iter().copied()).collect();
        Tensor::matrix(self.rows.len(), self.w, data).expect("rows have length w")
    }
}

/// Largest share of failed dates tolerated before the oracle is abandoned.
pub const MAX_GAP_SHARE: f64 = 0.10;

/// Generates one signature per spec date, issuing exactly `tau * K` queries
/// when nothing fails.
pub fn gen_signature_set(oracle: &mut dyn Oracle, spec: &SignatureSpec, source: &str) -> Result<SignatureSet, AttackError> {
    spec.validate()?;
    let hs = oracle.handshake()?;
    if hs.w != spec.w {
        return Err(AttackError::WindowMismatch {
            oracle: source.to_string(),
            expected: spec.w,
            got: hs.w,
        });
    }
    let mut rows = Vec::with_capacity(spec.k());
    let mut gaps = Vec::new();
    for (i, date) in spec.dates.iter().enumerate() {
        match gen_signature(oracle, spec, *date, (i * spec.tau) as u64 + 1) {
            Ok(sig) => rows.push(sig),
            Err(e) => {
                log::warn!("{source}: signature for {date} failed: {e}");
                gaps.push(i);
                rows.push(ModelSignature {
                    date: *date,
                    values: vec![0.0; spec.w],
                });
            }
        }
    }
    if gaps.len() as f64 > MAX_GAP_SHARE * spec.k() as f64 {
        return Err(AttackError::TooManyGaps {
            oracle: source.to_string(),
            failed: gaps.len(),
            k: spec.k(),
        });
    }
    Ok(SignatureSet {
        source: source.to_string(),
        w: spec.w,
        rows,
        gaps,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::blackbox::{ForecastResponse, Handshake};

    /// Oracle computing a fixed function of the window.
    pub(crate) struct FnOracle<F: FnMut(&[f64]) -> f64> {
        pub w: usize,
        pub f: F,
        pub calls: u64,
        /// Query ids that should fail.
        pub fail_ids: Vec<u64>,
    }

    impl<F: FnMut(&[f64]) -> f64> FnOracle<F> {
        pub(crate) fn new(w: usize, f: F) -> Self {
            Self {
                w,
                f,
                calls: 0,
                fail_ids: Vec::new(),
            }
        }
    }

    impl<F: FnMut(&[f64]) -> f64> Oracle for FnOracle<F> {
        fn handshake(&mut self) -> Result<Handshake, OracleError> {
            Ok(Handshake {
                w: self.w,
                interval_minutes: 30,
            })
        }

        fn query(&mut self, q: &ForecastQuery) -> Result<ForecastResponse, OracleError> {
            if self.fail_ids.contains(&q.id) {
                return Err(OracleError::Timeout { id: q.id, attempts: 4 });
            }
            self.calls += 1;
            Ok(ForecastResponse {
                id: q.id,
                prediction: (self.f)(&q.window),
            })
        }
    }

    pub(crate) fn date(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2009, 8, d).unwrap()
    }

    fn spec(w: usize, tau: usize) -> SignatureSpec {
        SignatureSpec::new(w, tau, vec![date(3), date(1), date(9)], 42).unwrap()
    }

    fn q(c: f64) -> f64 {
        let (lo, hi) = (c.min(0.0), c.max(1.0));
        (c - lo) / (hi - lo)
    }

    #[test]
    fn constant_oracle_fills_the_window() {
        for c in [0.0, 0.37, 1.0, 2.5, -0.4] {
            for tau in [6, 7, 20] {
                let mut o = FnOracle::new(6, |_| c);
                let sig = gen_signature(&mut o, &spec(6, tau), date(1), 0).unwrap();
                assert_eq!(sig.values, vec![q(c); 6], "c={c} tau={tau}");
            }
        }
    }

    #[test]
    fn last_element_oracle_repeats_x0_tail() {
        let s = spec(8, 8);
        for tau in [8, 9, 30] {
            let s = SignatureSpec { tau, ..s.clone() };
            let x0 = s.x0(date(3));
            let mut o = FnOracle::new(8, |w| *w.last().unwrap());
            let sig = gen_signature(&mut o, &s, date(3), 0).unwrap();
            assert_eq!(sig.values, vec![x0[7]; 8]);
        }
    }

    #[test]
    fn trace_has_prefix_property() {
        let s = spec(5, 12);
        let mut o = FnOracle::new(5, |w| w.iter().sum::<f64>() * 0.7 - 0.3);
        let trace = gen_signature_trace(&mut o, &s, date(9), 0).unwrap();
        for t1 in 1..12 {
            let short = SignatureSpec { tau: t1, ..s.clone() };
            let mut o = FnOracle::new(5, |w| w.iter().sum::<f64>() * 0.7 - 0.3);
            assert_eq!(gen_signature(&mut o, &short, date(9), 0).unwrap().values, trace[t1 - 1]);
        }
    }

    #[test]
    fn x0_depends_on_seed_and_date_only() {
        let s = spec(10, 3);
        assert_eq!(s.x0(date(1)), s.x0(date(1)));
        assert_ne!(s.x0(date(1)), s.x0(date(2)));
        assert!(s.x0(date(5)).iter().all(|v| (0.0..1.0).contains(v)));
        let other = SignatureSpec { x0_seed: 43, ..s.clone() };
        assert_ne!(s.x0(date(1)), other.x0(date(1)));
    }

    #[test]
    fn set_is_sorted_and_counts_queries() {
        let s = spec(4, 7);
        let mut o = FnOracle::new(4, |w| w[0] + 0.1);
        let set = gen_signature_set(&mut o, &s, "1001").unwrap();
        assert_eq!(set.k(), 3);
        assert_eq!(o.calls, s.queries_per_oracle());
        let dates: Vec<_> = set.rows.iter().map(|r| r.date).collect();
        assert_eq!(dates, [date(1), date(3), date(9)]);
        assert_eq!(set.to_tensor().shape(), [3, 4]);
    }

    #[test]
    fn identical_models_give_identical_sets() {
        use crate::blackbox::LocalOracle;
        use crate::forecaster::{build_model, ForecastHyperparams};
        let hp = ForecastHyperparams {
            lstm_nodes: 3,
            fc_nodes: 4,
            window: 6,
            ..ForecastHyperparams::default()
        };
        let s = spec(6, 9);
        let a = build_model(&hp, 8).unwrap();
        let b = build_model(&hp, 8).unwrap();
        let sa = gen_signature_set(&mut LocalOracle::new(std::sync::Arc::new(a)), &s, "x").unwrap();
        let sb = gen_signature_set(&mut LocalOracle::new(std::sync::Arc::new(b)), &s, "x").unwrap();
        assert_eq!(sa, sb);
    }

    #[test]
    fn window_mismatch_and_gaps() {
        let mut o = FnOracle::new(5, |_| 0.5);
        assert!(matches!(
            gen_signature_set(&mut o, &spec(4, 4), "x"),
            Err(AttackError::WindowMismatch { expected: 4, got: 5, .. })
        ));

        // one failed date out of three exceeds the 10% budget
        let mut o = FnOracle::new(4, |_| 0.5);
        o.fail_ids = vec![6];
        assert!(matches!(
            gen_signature_set(&mut o, &spec(4, 4), "x"),
            Err(AttackError::TooManyGaps { failed: 1, k: 3, .. })
        ));

        let dates: Vec<NaiveDate> = (1..=20).map(date).collect();
        let big = SignatureSpec::new(4, 4, dates, 1).unwrap();
        let mut o = FnOracle::new(4, |_| 0.5);
        o.fail_ids = vec![6];
        let set = gen_signature_set(&mut o, &big, "x").unwrap();
        assert_eq!(set.gaps, [1]);
        assert_eq!(set.rows[1].values, vec![0.0; 4]);
    }

    #[test]
    fn date_sampling() {
        let start = date(1).and_hms_opt(0, 0, 0).unwrap();
        let end = date(30).and_hms_opt(23, 30, 0).unwrap();
        let s = SignatureSpec::sample(48, 48, 10, (start, end), 5, 6).unwrap();
        assert_eq!(s.k(), 10);
        let mut uniq = s.dates.clone();
        uniq.dedup();
        assert_eq!(uniq.len(), 10);
        assert!(s.dates.iter().all(|d| *d >= date(1) && *d <= date(30)));
        assert_eq!(s, SignatureSpec::sample(48, 48, 10, (start, end), 5, 6).unwrap());
        // more dates than days falls back to sampling with replacement
        let s = SignatureSpec::sample(48, 48, 100, (start, end), 5, 6).unwrap();
        assert_eq!(s.k(), 100);
        assert_eq!(s.dates_hash().len(), 64);
    }
}
