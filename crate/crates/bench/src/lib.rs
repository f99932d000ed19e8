//! Fixed scenarios shared by the criterion benchmarks.

use ralab_core::rng::{substream, SimRng};
use ralab_core::{AntennaConfig, ChannelSet, ProtocolParams, RateSpec};

pub struct Scenario {
    pub name: &'static str,
    pub config: AntennaConfig,
    pub params: ProtocolParams,
    pub snr: f64,
}

impl Scenario {
    pub fn channels(&self, rng: &mut SimRng) -> ChannelSet {
        ChannelSet::draw(&self.config, self.snr, 0, rng).expect("scenario config is valid")
    }
}

/// Two-user scalar and vector channels at 30 dB, plus a 4-user 2x2 MIMO
/// case that exercises the Cholesky path.
pub fn scenarios() -> Vec<Scenario> {
    let rate = RateSpec::Multiplexing(0.45);
    let mk = |name, users, tx, rx, deadline| Scenario {
        name,
        config: AntennaConfig::new(users, tx, rx).expect("valid"),
        params: ProtocolParams::new(1.0, rate, deadline).expect("valid"),
        snr: 1e3,
    };
    vec![
        mk("scalar-k2", 2, 1, 1, 2),
        mk("vector-k2", 2, 1, 2, 2),
        mk("mimo-k4", 4, 2, 2, 4),
    ]
}

pub fn bench_rng() -> SimRng {
    substream(0xB5, 0)
}
