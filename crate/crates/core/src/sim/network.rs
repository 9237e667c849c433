//! Message latency and reachability between simulated endpoints.

use crate::time::SimTime;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::HashMap;
use std::fmt;
use std::time::Duration;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Endpoint {
    Region(u16),
    Store(u16),
    Client,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Region(r) => write!(f, "region-{r}"),
            Endpoint::Store(s) => write!(f, "store-{s}"),
            Endpoint::Client => f.write_str("client"),
        }
    }
}

/// One-way latency: normal around the median with a relative spread,
/// truncated to three deviations and never below 100 µs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkModel {
    pub p50: Duration,
    pub jitter: f64,
}

impl LinkModel {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Duration {
        let mean = self.p50.as_secs_f64();
        let sd = mean * self.jitter.max(0.0);
        if sd <= 0.0 {
            return self.p50.max(Duration::from_micros(100));
        }
        let normal = Normal::new(mean, sd).expect("finite parameters");
        let (lo, hi) = ((mean - 3.0 * sd).max(1e-4), mean + 3.0 * sd);
        for _ in 0..16 {
            let x = normal.sample(rng);
            if (lo..=hi).contains(&x) {
                return Duration::from_secs_f64(x);
            }
        }
        Duration::from_secs_f64(mean.max(1e-4))
    }
}

/// Which side of a cut an endpoint is on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    One(Endpoint),
    Everything,
}

impl Side {
    fn matches(self, e: Endpoint) -> bool {
        match self {
            Side::One(x) => x == e,
            Side::Everything => true,
        }
    }
}

/// Bidirectional loss of connectivity during `[from, until)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cut {
    pub a: Side,
    pub b: Side,
    pub from: SimTime,
    pub until: SimTime,
}

impl Cut {
    fn blocks(&self, x: Endpoint, y: Endpoint, at: SimTime) -> bool {
        at >= self.from
            && at < self.until
            && x != y
            && ((self.a.matches(x) && self.b.matches(y)) || (self.a.matches(y) && self.b.matches(x)))
    }
}

pub struct Network {
    default: LinkModel,
    links: HashMap<(Endpoint, Endpoint), LinkModel>,
    drop_rate: f64,
    cuts: Vec<Cut>,
    rng: ChaCha8Rng,
}

fn key(a: Endpoint, b: Endpoint) -> (Endpoint, Endpoint) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Network {
    pub fn new(default: LinkModel, drop_rate: f64, rng: ChaCha8Rng) -> Self {
        Network {
            default,
            links: HashMap::new(),
            drop_rate,
            cuts: Vec::new(),
            rng,
        }
    }

    pub fn set_link(&mut self, a: Endpoint, b: Endpoint, model: LinkModel) {
        self.links.insert(key(a, b), model);
    }

    pub fn link(&self, a: Endpoint, b: Endpoint) -> LinkModel {
        self.links.get(&key(a, b)).copied().unwrap_or(self.default)
    }

    pub fn add_cut(&mut self, cut: Cut) {
        self.cuts.push(cut);
    }

    pub fn is_cut(&self, a: Endpoint, b: Endpoint, at: SimTime) -> bool {
        self.cuts.iter().any(|c| c.blocks(a, b, at))
    }

    /// Arrival time of a message sent now, or `None` if it is lost. A cut
    /// that starts while the message is in flight also loses it.
    pub fn transmit(&mut self, from: Endpoint, to: Endpoint, now: SimTime) -> Option<SimTime> {
        if from == to {
            return Some(now);
        }
        if self.is_cut(from, to, now) {
            return None;
        }
        if self.drop_rate > 0.0 && self.rng.random::<f64>() < self.drop_rate {
            return None;
        }
        let at = now + self.link(from, to).sample(&mut self.rng);
        (!self.is_cut(from, to, at)).then_some(at)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn net() -> Network {
        Network::new(
            LinkModel {
                p50: Duration::from_millis(50),
                jitter: 0.25,
            },
            0.0,
            ChaCha8Rng::seed_from_u64(1),
        )
    }

    #[test]
    fn latency_is_truncated_normal() {
        let m = LinkModel {
            p50: Duration::from_millis(100),
            jitter: 0.25,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..20_000).map(|_| m.sample(&mut rng).as_secs_f64()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 0.1).abs() < 0.002, "mean {mean}");
        assert!(xs.iter().all(|&x| (0.025..=0.175).contains(&x)));
    }

    #[test]
    fn cuts_block_both_directions_for_their_window() {
        let mut n = net();
        n.add_cut(Cut {
            a: Side::One(Endpoint::Region(0)),
            b: Side::Everything,
            from: SimTime::from_secs(10),
            until: SimTime::from_secs(20),
        });
        let (r0, r1) = (Endpoint::Region(0), Endpoint::Region(1));
        assert!(n.transmit(r1, r0, SimTime::from_secs(15)).is_none());
        assert!(n.transmit(r0, Endpoint::Store(3), SimTime::from_secs(15)).is_none());
        assert!(n.transmit(r1, Endpoint::Store(3), SimTime::from_secs(15)).is_some());
        assert!(n.transmit(r1, r0, SimTime::from_secs(20)).is_some());
        // In flight when the cut begins.
        assert!(n.transmit(r1, r0, SimTime::from_micros(9_999_990)).is_none());
    }

    #[test]
    fn per_link_overrides() {
        let mut n = net();
        let fast = LinkModel {
            p50: Duration::from_millis(1),
            jitter: 0.0,
        };
        n.set_link(Endpoint::Store(1), Endpoint::Region(2), fast);
        assert_eq!(n.link(Endpoint::Region(2), Endpoint::Store(1)), fast);
        let at = n.transmit(Endpoint::Region(2), Endpoint::Store(1), SimTime::ZERO).unwrap();
        assert_eq!(at, SimTime::from_millis(1));
    }
}
