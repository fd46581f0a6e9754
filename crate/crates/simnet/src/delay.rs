//! Link delay models.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// What the network does with messages sent before GST.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PreGst {
    /// Per-message delay drawn from `[1, max]`, capped at GST + delta.
    Adversarial { max: u64 },
    /// Held until GST, then delivered within delta.
    DropUntilGst,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DelayModel {
    /// Every hop takes exactly `d` ticks.
    Uniform { d: u64 },
    PartialSync {
        gst: u64,
        /// Upper bound on delay for messages sent at or after GST.
        delta: u64,
        pre_gst: PreGst,
    },
}

impl DelayModel {
    pub fn gst(&self) -> u64 {
        match self {
            DelayModel::Uniform { .. } => 0,
            DelayModel::PartialSync { gst, .. } => *gst,
        }
    }

    /// The post-GST delay bound.
    pub fn delta(&self) -> u64 {
        match self {
            DelayModel::Uniform { d } => *d,
            DelayModel::PartialSync { delta, .. } => *delta,
        }
    }

    /// Delivery time for a message sent at `now`.
    pub fn delivery_time(&self, now: u64, rng: &mut ChaCha8Rng) -> u64 {
        match *self {
            DelayModel::Uniform { d } => now + d,
            DelayModel::PartialSync {
                gst,
                delta,
                pre_gst,
            } => {
                let after_gst = |rng: &mut ChaCha8Rng| rng.gen_range(1..=delta.max(1));
                if now >= gst {
                    return now + after_gst(rng);
                }
                match pre_gst {
                    PreGst::Adversarial { max } => {
                        let early = now + rng.gen_range(1..=max.max(1));
                        early.min(gst + after_gst(rng))
                    }
                    PreGst::DropUntilGst => gst + after_gst(rng),
                }
            }
        }
    }

    /// Latest delivery time the model allows for a message sent at `sent`.
    pub fn deadline(&self, sent: u64) -> u64 {
        match *self {
            DelayModel::Uniform { d } => sent + d,
            DelayModel::PartialSync { gst, delta, .. } => sent.max(gst) + delta,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn uniform_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DelayModel::Uniform { d: 5 };
        assert_eq!(m.delivery_time(10, &mut rng), 15);
    }

    #[test]
    fn partial_sync_respects_deadlines() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for pre_gst in [PreGst::Adversarial { max: 500 }, PreGst::DropUntilGst] {
            let m = DelayModel::PartialSync {
                gst: 100,
                delta: 10,
                pre_gst,
            };
            for now in 0..300 {
                let t = m.delivery_time(now, &mut rng);
                assert!(t > now && t <= m.deadline(now), "{now} -> {t}");
            }
        }
    }

    #[test]
    fn drop_until_gst_holds_messages() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DelayModel::PartialSync {
            gst: 100,
            delta: 10,
            pre_gst: PreGst::DropUntilGst,
        };
        for now in 0..100 {
            assert!(m.delivery_time(now, &mut rng) > 100);
        }
    }
}
