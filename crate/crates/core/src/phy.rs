//! Rayleigh block-fading channels and outage-based decoding decisions.
//!
//! Channels are frozen for a whole collision-resolution epoch. With the
//! block length idealized to infinity a decoder fails exactly when the
//! channel is in outage, so every decision reduces to comparing mutual
//! information against the rate each user set demands.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dmt::AntennaConfig;
use crate::error::{check_range, Error, Result};

/// Bitmask of user indices (K <= 32).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct UserSet(u32);

impl UserSet {
    pub const EMPTY: UserSet = UserSet(0);

    pub fn from_bits(bits: u32) -> Self {
        UserSet(bits)
    }

    /// Users `0..k`.
    pub fn first(k: usize) -> Self {
        if k >= 32 {
            UserSet(u32::MAX)
        } else {
            UserSet((1u32 << k) - 1)
        }
    }

    pub fn single(user: usize) -> Self {
        UserSet(1 << user)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, user: usize) -> bool {
        user < 32 && self.0 & (1 << user) != 0
    }

    pub fn insert(&mut self, user: usize) {
        self.0 |= 1 << user;
    }

    pub fn remove(&mut self, user: usize) {
        self.0 &= !(1 << user);
    }

    pub fn union(self, other: UserSet) -> UserSet {
        UserSet(self.0 | other.0)
    }

    pub fn minus(self, other: UserSet) -> UserSet {
        UserSet(self.0 & !other.0)
    }

    pub fn is_subset_of(self, other: UserSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Member indices in increasing order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(i)
            }
        })
    }

    /// Every nonempty subset, including `self`.
    pub fn subsets(self) -> impl Iterator<Item = UserSet> {
        let full = self.0;
        let mut next = Some(full);
        std::iter::from_fn(move || {
            let cur = next?;
            if cur == 0 {
                return None;
            }
            next = Some((cur - 1) & full);
            Some(UserSet(cur))
        })
    }
}

impl FromIterator<usize> for UserSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut s = UserSet::EMPTY;
        for u in iter {
            s.insert(u);
        }
        s
    }
}

impl fmt::Display for UserSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, u) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{u}")?;
        }
        f.write_str("}")
    }
}

/// One epoch's channel matrices (N x M per user) and the common average SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    users: usize,
    tx: usize,
    rx: usize,
    snr: f64,
    epoch: u64,
    /// Column-major N x M blocks, one per user.
    h: Vec<Complex64>,
    /// `H_i H_i^H`, N x N column-major, one per user.
    gram: Vec<Complex64>,
}

impl ChannelSet {
    /// Draw i.i.d. CN(0, 1) entries for every user.
    pub fn draw<R: Rng + ?Sized>(config: &AntennaConfig, snr: f64, epoch: u64, rng: &mut R) -> Result<Self> {
        config.validate()?;
        check_range("snr", snr, snr > 0.0, "(0, inf)")?;
        let mut set = ChannelSet {
            users: config.users,
            tx: config.tx,
            rx: config.rx,
            snr,
            epoch,
            h: vec![Complex64::new(0.0, 0.0); config.users * config.rx * config.tx],
            gram: vec![Complex64::new(0.0, 0.0); config.users * config.rx * config.rx],
        };
        set.fill(rng);
        Ok(set)
    }

    /// Replace the channels with a fresh independent draw for the next epoch.
    pub fn redraw<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.epoch += 1;
        self.fill(rng);
    }

    fn fill<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for z in self.h.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *z = Complex64::new(s * re, s * im);
        }
        self.refresh_gram();
    }

    fn refresh_gram(&mut self) {
        let (n, m) = (self.rx, self.tx);
        for u in 0..self.users {
            let h = &self.h[u * n * m..(u + 1) * n * m];
            let g = &mut self.gram[u * n * n..(u + 1) * n * n];
            for c in 0..n {
                for r in 0..n {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for t in 0..m {
                        acc += h[t * n + r] * h[t * n + c].conj();
                    }
                    g[c * n + r] = acc;
                }
            }
        }
    }

    /// Build from explicit N x M matrices (all the same shape).
    pub fn from_matrices(snr: f64, matrices: &[DMatrix<Complex64>]) -> Result<Self> {
        check_range("snr", snr, snr > 0.0, "(0, inf)")?;
        let first = matrices.first().ok_or(Error::EmptyUserSet)?;
        let (rx, tx) = first.shape();
        if matrices.iter().any(|m| m.shape() != (rx, tx)) || rx == 0 || tx == 0 {
            return Err(Error::InvalidConfig("channel matrices differ in shape".into()));
        }
        let mut set = ChannelSet {
            users: matrices.len(),
            tx,
            rx,
            snr,
            epoch: 0,
            h: matrices.iter().flat_map(|m| m.iter().copied()).collect(),
            gram: vec![Complex64::new(0.0, 0.0); matrices.len() * rx * rx],
        };
        set.refresh_gram();
        Ok(set)
    }

    /// Scalar (M = N = 1) channels with the given power gains `|h|^2`.
    pub fn scalar(snr: f64, gains: &[f64]) -> Result<Self> {
        let mats: Vec<_> = gains
            .iter()
            .map(|&g| DMatrix::from_element(1, 1, Complex64::new(g.max(0.0).sqrt(), 0.0)))
            .collect();
        Self::from_matrices(snr, &mats)
    }

    /// Same channels at a different SNR.
    pub fn with_snr(&self, snr: f64) -> Self {
        ChannelSet { snr, ..self.clone() }
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn tx(&self) -> usize {
        self.tx
    }

    pub fn rx(&self) -> usize {
        self.rx
    }

    pub fn snr(&self) -> f64 {
        self.snr
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn matrix(&self, user: usize) -> DMatrix<Complex64> {
        let (n, m) = (self.rx, self.tx);
        DMatrix::from_column_slice(n, m, &self.h[user * n * m..(user + 1) * n * m])
    }

    /// Squared Frobenius norm of user `user`'s channel.
    pub fn power_gain(&self, user: usize) -> f64 {
        let n = self.rx;
        (0..n).map(|i| self.gram[user * n * n + i * n + i].re).sum()
    }

    /// `log2 det(I_N + scale * sum_{i in set} H_i H_i^H)`.
    fn log_det(&self, set: UserSet, scale: f64) -> f64 {
        let n = self.rx;
        if n == 1 {
            let g: f64 = set.iter().map(|u| self.gram[u].re).sum();
            return (1.0 + scale * g).log2();
        }
        let mut a = DMatrix::<Complex64>::identity(n, n);
        for u in set.iter() {
            let g = &self.gram[u * n * n..(u + 1) * n * n];
            for (dst, src) in a.iter_mut().zip(g) {
                *dst += src * scale;
            }
        }
        match a.clone().cholesky() {
            Some(ch) => {
                let l = ch.l();
                2.0 * (0..n).map(|i| l[(i, i)].norm().ln()).sum::<f64>() / std::f64::consts::LN_2
            }
            None => a.determinant().re.max(1.0).log2(),
        }
    }

    pub(crate) fn mutual_information(&self, set: UserSet) -> f64 {
        self.log_det(set, self.snr / self.tx as f64)
    }
}

/// Draw a fresh channel set for `config` at linear SNR `snr`.
pub fn draw_channels<R: Rng + ?Sized>(config: &AntennaConfig, snr: f64, rng: &mut R) -> Result<ChannelSet> {
    ChannelSet::draw(config, snr, 0, rng)
}

/// Sum mutual information of user set `subset` with white inputs at
/// per-antenna power `snr / M`, in bits per channel use.
pub fn subset_mutual_information(channels: &ChannelSet, subset: UserSet) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::EmptyUserSet);
    }
    check_users(channels, subset)?;
    Ok(channels.mutual_information(subset))
}

fn check_users(channels: &ChannelSet, set: UserSet) -> Result<()> {
    if set.is_subset_of(UserSet::first(channels.users)) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "user set {set} exceeds the {} users of the channel set",
            channels.users
        )))
    }
}

/// Mutual information of every nonempty subset of an active set, computed
/// once per epoch. With the channel static over the epoch, `rounds` ARQ
/// rounds accumulate `rounds * I_S`.
#[derive(Debug, Clone)]
pub struct SubsetRates {
    active: UserSet,
    entries: Vec<(u32, f64)>,
}

impl SubsetRates {
    pub fn new(channels: &ChannelSet, active: UserSet) -> Self {
        let entries = active
            .subsets()
            .map(|s| (s.len() as u32, channels.mutual_information(s)))
            .collect();
        SubsetRates { active, entries }
    }

    pub fn active(&self) -> UserSet {
        self.active
    }

    /// True when some subset S has `rounds * I_S < |S| * rate`.
    pub fn outage(&self, rate: f64, rounds: u32) -> bool {
        let l = rounds as f64;
        self.entries.iter().any(|&(s, i)| l * i < s as f64 * rate)
    }

    /// First round at which joint decoding succeeds, if any up to `max_rounds`.
    pub fn first_decodable_round(&self, rate: f64, max_rounds: u32) -> Option<u32> {
        (1..=max_rounds).find(|&l| !self.outage(rate, l))
    }
}

/// Joint (multi-user, multi-round) decoder outage: true if any nonempty
/// subset of `active` cannot be decoded after `rounds` rounds at first-round
/// rate `rate`.
pub fn joint_outage(channels: &ChannelSet, active: UserSet, rate: f64, rounds: u32) -> Result<bool> {
    if active.is_empty() {
        return Err(Error::EmptyUserSet);
    }
    check_users(channels, active)?;
    check_range("R", rate, rate >= 0.0, "[0, inf)")?;
    if rounds == 0 {
        return Err(Error::OutOfRange {
            name: "rounds",
            value: 0.0,
            expected: "[1, inf)",
        });
    }
    Ok(SubsetRates::new(channels, active).outage(rate, rounds))
}

/// SNR multiplier of an O-NDMA single-user decoder after matched filtering
/// over the k slots of a k-user collision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombiningGain {
    /// The decoder sees the nominal SNR.
    #[default]
    Unit,
    /// Coherent combining of k repetitions multiplies the SNR by k.
    Slots,
}

impl CombiningGain {
    pub fn factor(self, slots: usize) -> f64 {
        match self {
            CombiningGain::Unit => 1.0,
            CombiningGain::Slots => slots.max(1) as f64,
        }
    }
}

/// Single-user decoder outage: `log2 det(I + g snr/M H H^H) < rate`.
pub fn single_user_outage(channels: &ChannelSet, user: usize, rate: f64, gain: f64) -> bool {
    let scale = gain * channels.snr / channels.tx as f64;
    channels.log_det(UserSet::single(user), scale) < rate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;

    fn cfg(k: usize, m: usize, n: usize) -> AntennaConfig {
        AntennaConfig::new(k, m, n).unwrap()
    }

    #[test]
    fn user_set_basics() {
        let s: UserSet = [0, 2, 3].into_iter().collect();
        assert_eq!(s.len(), 3);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![0, 2, 3]);
        assert_eq!(s.subsets().count(), 7);
        assert!(s.subsets().all(|t| t.is_subset_of(s) && !t.is_empty()));
        assert_eq!(s.to_string(), "{0,2,3}");
        assert_eq!(UserSet::EMPTY.subsets().count(), 0);
        assert_eq!(UserSet::first(3).bits(), 0b111);
    }

    #[test]
    fn draw_shape() {
        let mut rng = substream(1, 0);
        let ch = draw_channels(&cfg(2, 1, 1), 10.0, &mut rng).unwrap();
        assert_eq!((ch.users(), ch.tx(), ch.rx()), (2, 1, 1));
        assert_eq!(ch.matrix(1).shape(), (1, 1));
        let ch = draw_channels(&cfg(3, 2, 4), 10.0, &mut rng).unwrap();
        assert_eq!(ch.matrix(2).shape(), (4, 2));
        assert!(draw_channels(&cfg(1, 1, 1), 0.0, &mut rng).is_err());
    }

    #[test]
    fn unit_variance_entries() {
        let mut rng = substream(2, 0);
        let mut ch = draw_channels(&cfg(1, 1, 1), 1.0, &mut rng).unwrap();
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            ch.redraw(&mut rng);
            sum += ch.power_gain(0);
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn successive_epochs_uncorrelated() {
        let mut rng = substream(1, 0);
        let mut ch = draw_channels(&cfg(1, 1, 1), 1.0, &mut rng).unwrap();
        let n = 100_000;
        let mut prev = ch.power_gain(0);
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            ch.redraw(&mut rng);
            let cur = ch.power_gain(0);
            sx += prev;
            sy += cur;
            sxx += prev * prev;
            syy += cur * cur;
            sxy += prev * cur;
            prev = cur;
        }
        let nf = n as f64;
        let cov = sxy / nf - sx * sy / nf / nf;
        let corr = cov / ((sxx / nf - (sx / nf).powi(2)) * (syy / nf - (sy / nf).powi(2))).sqrt();
        assert!(corr.abs() < 3.0 / nf.sqrt(), "{corr}");
    }

    #[test]
    fn mutual_information_examples() {
        let zero = ChannelSet::scalar(3.0, &[0.0, 0.0]).unwrap();
        assert_eq!(subset_mutual_information(&zero, UserSet::first(2)).unwrap(), 0.0);
        let ch = ChannelSet::scalar(3.0, &[1.0, 1.0]).unwrap();
        assert!((subset_mutual_information(&ch, UserSet::single(0)).unwrap() - 2.0).abs() < 1e-12);
        let both = subset_mutual_information(&ch, UserSet::first(2)).unwrap();
        assert!((both - 7f64.log2()).abs() < 1e-12);
        assert!(subset_mutual_information(&ch, UserSet::EMPTY).is_err());
    }

    #[test]
    fn mimo_mutual_information_matches_determinant() {
        let mut rng = substream(4, 0);
        let ch = draw_channels(&cfg(2, 2, 3), 5.0, &mut rng).unwrap();
        let mut a = DMatrix::<Complex64>::identity(3, 3);
        for u in 0..2 {
            let h = ch.matrix(u);
            a += (&h * h.adjoint()) * Complex64::new(5.0 / 2.0, 0.0);
        }
        let direct = a.determinant().re.log2();
        let got = subset_mutual_information(&ch, UserSet::first(2)).unwrap();
        assert!((got - direct).abs() < 1e-9, "{got} vs {direct}");
    }

    #[test]
    fn joint_outage_examples() {
        let one = ChannelSet::scalar(3.0, &[1.0]).unwrap();
        assert!(!joint_outage(&one, UserSet::single(0), 2.0, 1).unwrap());
        let two = ChannelSet::scalar(3.0, &[1.0, 1.0]).unwrap();
        assert!(joint_outage(&two, UserSet::first(2), 1.6, 1).unwrap());
        assert!(!joint_outage(&two, UserSet::first(2), 1.3, 1).unwrap());
        // two rounds: 2 * log2(7) = 5.61 covers 2 * 1.6 but not 2 * 3
        assert!(!joint_outage(&two, UserSet::first(2), 1.6, 2).unwrap());
        assert!(joint_outage(&two, UserSet::first(2), 3.0, 2).unwrap());
        assert!(joint_outage(&two, UserSet::EMPTY, 1.0, 1).is_err());
        assert!(joint_outage(&two, UserSet::first(3), 1.0, 1).is_err());
    }

    #[test]
    fn single_user_examples() {
        let ch = ChannelSet::scalar(3.0, &[1.0]).unwrap();
        assert!(!single_user_outage(&ch, 0, 2.0, 1.0));
        assert!(single_user_outage(&ch, 0, 2.1, 1.0));
        assert!(!single_user_outage(&ch, 0, 2.1, 2.0));
        assert_eq!(CombiningGain::Slots.factor(3), 3.0);
        assert_eq!(CombiningGain::Unit.factor(3), 1.0);
    }

    proptest! {
        #[test]
        fn outage_nested_in_rounds(seed in any::<u64>(), k in 1usize..4, rate in 0.0f64..8.0) {
            let mut rng = substream(seed, 0);
            let ch = draw_channels(&cfg(k, 1, 2), 10.0, &mut rng).unwrap();
            let rates = SubsetRates::new(&ch, UserSet::first(k));
            for l in 1..6 {
                if !rates.outage(rate, l) {
                    prop_assert!(!rates.outage(rate, l + 1));
                }
            }
        }

        #[test]
        fn outage_monotone_in_snr(seed in any::<u64>(), k in 1usize..4, rate in 0.0f64..6.0,
                                  lo in 0.0f64..30.0, step in 0.0f64..20.0) {
            let mut rng = substream(seed, 1);
            let ch = draw_channels(&cfg(k, 2, 2), crate::math::db_to_linear(lo), &mut rng).unwrap();
            let hi = ch.with_snr(crate::math::db_to_linear(lo + step));
            let a = UserSet::first(k);
            if !joint_outage(&ch, a, rate, 1).unwrap() {
                prop_assert!(!joint_outage(&hi, a, rate, 1).unwrap());
            }
        }

        #[test]
        fn removing_a_user_never_creates_outage(seed in any::<u64>(), k in 2usize..5,
                                                drop in 0usize..4, rate in 0.0f64..4.0) {
            let mut rng = substream(seed, 2);
            let ch = draw_channels(&cfg(k, 1, 1), 20.0, &mut rng).unwrap();
            let full = UserSet::first(k);
            let mut sub = full;
            sub.remove(drop % k);
            if !joint_outage(&ch, full, rate, 1).unwrap() {
                prop_assert!(!joint_outage(&ch, sub, rate, 1).unwrap());
            }
        }

        #[test]
        fn mutual_information_monotone(seed in any::<u64>(), k in 1usize..4) {
            let mut rng = substream(seed, 3);
            let ch = draw_channels(&cfg(k, 2, 2), 10.0, &mut rng).unwrap();
            let full = UserSet::first(k);
            let whole = subset_mutual_information(&ch, full).unwrap();
            for s in full.subsets() {
                let v = subset_mutual_information(&ch, s).unwrap();
                prop_assert!(v >= 0.0 && v <= whole + 1e-9);
            }
        }
    }
}
