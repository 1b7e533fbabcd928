//! Layered model cost profiles and how a partition splits them across the
//! mobile, edge and cloud tiers.
//!
//! Units are fixed: compute in GFLOP, capacities in GFLOP/s, payloads in
//! Mbit, link rates in Mbit/s, time in seconds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("empty profile: a model needs at least one layer")]
    EmptyProfile,
    #[error("layer {layer}: {field} must be a non-negative number")]
    InvalidLayer { layer: usize, field: &'static str },
    #[error("input_mbit must be a non-negative number")]
    InvalidInput,
    #[error("invalid partition cut1={cut1} cut2={cut2} for a {layers}-layer model (need 0 <= cut1 <= cut2 <= L)")]
    InvalidPartition {
        cut1: usize,
        cut2: usize,
        layers: usize,
    },
    #[error("{tier} has work but no positive capacity")]
    MissingCapacity { tier: &'static str },
}

/// One layer of a generative model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer<T> {
    pub gflop: T,
    pub act_mbit: T,
    /// An early exit may produce output right after this layer.
    #[serde(default)]
    pub exit_point: bool,
}

impl<T: Real> Layer<T> {
    pub fn new(gflop: T, act_mbit: T) -> Self {
        Self {
            gflop,
            act_mbit,
            exit_point: false,
        }
    }

    pub fn with_exit(mut self) -> Self {
        self.exit_point = true;
        self
    }
}

/// Ordered layers plus the size of the raw sampled prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProfile<T> {
    pub layers: Vec<Layer<T>>,
    pub input_mbit: T,
}

/// Layers `1..=cut1` run on the mobile device, `cut1+1..=cut2` on the edge and
/// the rest in the cloud.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub cut1: usize,
    pub cut2: usize,
}

impl Partition {
    pub fn new(cut1: usize, cut2: usize) -> Self {
        Self { cut1, cut2 }
    }

    /// Mobile-edge split with nothing in the cloud.
    pub fn two_tier(cut1: usize, layers: usize) -> Self {
        Self { cut1, cut2: layers }
    }

    pub fn is_valid_for(&self, layers: usize) -> bool {
        self.cut1 <= self.cut2 && self.cut2 <= layers
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tiers {
    Two,
    Three,
}

/// Work each tier and link performs for one job under a partition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageCosts<T> {
    pub mobile_gflop: T,
    pub edge_gflop: T,
    pub cloud_gflop: T,
    pub uplink1_mbit: T,
    pub uplink2_mbit: T,
}

impl<T: Real> ModelProfile<T> {
    pub fn new(layers: Vec<Layer<T>>, input_mbit: T) -> Self {
        Self { layers, input_mbit }
    }

    /// `count` identical layers.
    pub fn uniform(count: usize, gflop: T, act_mbit: T, input_mbit: T) -> Self {
        Self {
            layers: vec![Layer::new(gflop, act_mbit); count],
            input_mbit,
        }
    }

    /// Synthetic reference model used by the mobile-edge partition experiment:
    /// ten 10 GFLOP layers with a 1 Mbit payload at every cut, raw input
    /// included. Not measured data.
    pub fn reference() -> Self {
        Self::uniform(10, T::lit(10.0), T::one(), T::one())
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn total_gflop(&self) -> T {
        self.layers.iter().map(|l| l.gflop).sum()
    }

    /// Reports the first violated invariant; layers are numbered from 1.
    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.layers.is_empty() {
            return Err(ProfileError::EmptyProfile);
        }
        let bad = |v: T| !(v >= T::zero()) || !v.is_finite();
        for (i, layer) in self.layers.iter().enumerate() {
            if bad(layer.gflop) {
                return Err(ProfileError::InvalidLayer {
                    layer: i + 1,
                    field: "gflop",
                });
            }
            if bad(layer.act_mbit) {
                return Err(ProfileError::InvalidLayer {
                    layer: i + 1,
                    field: "act_mbit",
                });
            }
        }
        if bad(self.input_mbit) {
            return Err(ProfileError::InvalidInput);
        }
        Ok(())
    }

    pub fn check_partition(&self, p: Partition) -> Result<(), ProfileError> {
        if p.is_valid_for(self.len()) {
            Ok(())
        } else {
            Err(ProfileError::InvalidPartition {
                cut1: p.cut1,
                cut2: p.cut2,
                layers: self.len(),
            })
        }
    }

    /// Payload crossing a cut after `cut` layers: the raw input at 0,
    /// otherwise the activation of layer `cut`.
    pub fn payload_at(&self, cut: usize) -> T {
        if cut == 0 {
            self.input_mbit
        } else {
            self.layers[cut - 1].act_mbit
        }
    }

    pub fn partition_costs(&self, p: Partition) -> Result<StageCosts<T>, ProfileError> {
        self.check_partition(p)?;
        let sum = |range: std::ops::Range<usize>| -> T {
            self.layers[range].iter().map(|l| l.gflop).sum()
        };
        let l = self.len();
        Ok(StageCosts {
            mobile_gflop: sum(0..p.cut1),
            edge_gflop: sum(p.cut1..p.cut2),
            cloud_gflop: sum(p.cut2..l),
            uplink1_mbit: self.payload_at(p.cut1),
            uplink2_mbit: if p.cut2 == l {
                T::zero()
            } else {
                self.payload_at(p.cut2)
            },
        })
    }

    /// All candidate partitions in lexicographic `(cut1, cut2)` order.
    pub fn enumerate_partitions(&self, tiers: Tiers) -> Vec<Partition> {
        let l = self.len();
        match tiers {
            Tiers::Two => (0..=l).map(|c| Partition::two_tier(c, l)).collect(),
            Tiers::Three => (0..=l)
                .flat_map(|c1| (c1..=l).map(move |c2| Partition::new(c1, c2)))
                .collect(),
        }
    }
}

/// Per-tier processing capacities and link rates. `None` marks an absent
/// tier or link, which is fine as long as it carries no work.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TierCapacities<T> {
    pub mobile: Option<T>,
    pub edge: Option<T>,
    pub cloud: Option<T>,
    pub rate1: Option<T>,
    pub rate2: Option<T>,
}

impl<T: Real> TierCapacities<T> {
    pub fn two_tier(mobile: T, edge: T, rate1: T) -> Self {
        Self {
            mobile: Some(mobile),
            edge: Some(edge),
            cloud: None,
            rate1: Some(rate1),
            rate2: None,
        }
    }

    pub fn three_tier(mobile: T, edge: T, cloud: T, rate1: T, rate2: T) -> Self {
        Self {
            mobile: Some(mobile),
            edge: Some(edge),
            cloud: Some(cloud),
            rate1: Some(rate1),
            rate2: Some(rate2),
        }
    }
}

/// Inference delay of one job with every tier working at fixed capacity:
/// compute and transfer times summed in pipeline order.
pub fn static_delay<T: Real>(
    costs: &StageCosts<T>,
    caps: &TierCapacities<T>,
) -> Result<T, ProfileError> {
    let term = |work: T, cap: Option<T>, tier: &'static str| -> Result<T, ProfileError> {
        if work == T::zero() {
            return Ok(T::zero());
        }
        match cap {
            Some(c) if c > T::zero() => Ok(work / c),
            _ => Err(ProfileError::MissingCapacity { tier }),
        }
    };
    Ok(term(costs.mobile_gflop, caps.mobile, "mobile")?
        + term(costs.uplink1_mbit, caps.rate1, "uplink1")?
        + term(costs.edge_gflop, caps.edge, "edge")?
        + term(costs.uplink2_mbit, caps.rate2, "uplink2")?
        + term(costs.cloud_gflop, caps.cloud, "cloud")?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> ModelProfile<f64> {
        ModelProfile::new(
            vec![
                Layer::new(10.0, 4.0),
                Layer::new(20.0, 2.0),
                Layer::new(30.0, 1.0),
            ],
            8.0,
        )
    }

    #[test]
    fn validate_accepts_good_and_names_bad_layer() {
        assert!(small().validate().is_ok());
        let empty = ModelProfile::<f64>::new(vec![], 1.0);
        assert_eq!(empty.validate(), Err(ProfileError::EmptyProfile));
        assert!(empty.validate().unwrap_err().to_string().contains("empty profile"));

        let mut p = small();
        p.layers[1].gflop = -1.0;
        let err = p.validate().unwrap_err();
        assert_eq!(
            err,
            ProfileError::InvalidLayer {
                layer: 2,
                field: "gflop"
            }
        );
        assert!(err.to_string().contains("layer 2"));

        let mut p = small();
        p.layers[0].act_mbit = f64::NAN;
        assert!(p.validate().is_err());
    }

    #[test]
    fn partition_costs_direct_sums() {
        let p = small();
        let c = p.partition_costs(Partition::new(2, 3)).unwrap();
        assert_eq!(
            c,
            StageCosts {
                mobile_gflop: 30.0,
                edge_gflop: 30.0,
                cloud_gflop: 0.0,
                uplink1_mbit: 2.0,
                uplink2_mbit: 0.0
            }
        );

        let c = p.partition_costs(Partition::new(0, 3)).unwrap();
        assert_eq!((c.mobile_gflop, c.edge_gflop, c.cloud_gflop), (0.0, 60.0, 0.0));
        assert_eq!(c.uplink1_mbit, 8.0);

        let c = p.partition_costs(Partition::new(3, 3)).unwrap();
        assert_eq!(c.uplink1_mbit, 1.0);
        assert_eq!(c.edge_gflop, 0.0);

        // edge relays the layer-1 activation to the cloud
        let c = p.partition_costs(Partition::new(1, 1)).unwrap();
        assert_eq!((c.uplink1_mbit, c.uplink2_mbit, c.cloud_gflop), (4.0, 4.0, 50.0));

        assert!(matches!(
            p.partition_costs(Partition::new(2, 1)),
            Err(ProfileError::InvalidPartition { .. })
        ));
        assert!(p.partition_costs(Partition::new(0, 4)).is_err());
    }

    #[test]
    fn enumerate_counts_and_order() {
        let p = small();
        let two = p.enumerate_partitions(Tiers::Two);
        assert_eq!(two.iter().map(|p| p.cut1).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert!(two.iter().all(|p| p.cut2 == 3));

        // brute-force count of pairs 0 <= a <= b <= 3
        let mut brute = 0;
        for a in 0..=3 {
            for b in 0..=3 {
                if a <= b {
                    brute += 1;
                }
            }
        }
        let three = p.enumerate_partitions(Tiers::Three);
        assert_eq!(three.len(), brute);
        assert_eq!(brute, 10);
        assert!(three.windows(2).all(|w| w[0] < w[1]));

        let one = ModelProfile::uniform(1, 1.0, 1.0, 1.0);
        assert_eq!(
            one.enumerate_partitions(Tiers::Two),
            vec![Partition::new(0, 1), Partition::new(1, 1)]
        );
    }

    #[test]
    fn static_delay_arithmetic() {
        let costs = StageCosts {
            mobile_gflop: 30.0,
            edge_gflop: 30.0,
            uplink1_mbit: 2.0,
            ..Default::default()
        };
        let caps = TierCapacities::two_tier(500.0, 500.0, 100.0);
        let d: f64 = static_delay(&costs, &caps).unwrap();
        assert!((d - 0.14).abs() < 1e-12);

        let zero = StageCosts::<f64>::default();
        assert_eq!(static_delay(&zero, &TierCapacities::default()).unwrap(), 0.0);

        let caps = TierCapacities::two_tier(500.0, 0.0, 100.0);
        assert_eq!(
            static_delay(&costs, &caps),
            Err(ProfileError::MissingCapacity { tier: "edge" })
        );
    }

    #[test]
    fn works_in_f32() {
        let p = ModelProfile::<f32>::reference();
        let c = p.partition_costs(Partition::two_tier(5, 10)).unwrap();
        assert_eq!(c.mobile_gflop + c.edge_gflop, 100.0);
        let d = static_delay(&c, &TierCapacities::two_tier(500.0, 500.0, 1000.0)).unwrap();
        assert!((d - 0.201).abs() < 1e-6);
    }

    fn profile_strategy() -> impl Strategy<Value = ModelProfile<f64>> {
        (
            prop::collection::vec((0.0..100.0f64, 0.0..10.0f64), 1..12),
            0.0..10.0f64,
        )
            .prop_map(|(layers, input)| {
                ModelProfile::new(
                    layers.into_iter().map(|(g, a)| Layer::new(g, a)).collect(),
                    input,
                )
            })
    }

    proptest! {
        #[test]
        fn tier_sums_match_total(p in profile_strategy()) {
            let l = p.len();
            prop_assert_eq!(p.enumerate_partitions(Tiers::Two).len(), l + 1);
            let all = p.enumerate_partitions(Tiers::Three);
            prop_assert_eq!(all.len(), (l + 1) * (l + 2) / 2);
            // integer-valued layers make the three partial sums exact
            let ints = ModelProfile::new(
                p.layers.iter().map(|x| Layer::new(x.gflop.round(), x.act_mbit)).collect(),
                p.input_mbit,
            );
            let total = ints.total_gflop();
            for part in all {
                let c = ints.partition_costs(part).unwrap();
                prop_assert_eq!(c.mobile_gflop + c.edge_gflop + c.cloud_gflop, total);
            }
        }

        #[test]
        fn delay_non_increasing_in_capacity(
            p in profile_strategy(),
            cut in 0usize..12,
            caps in prop::array::uniform5(1.0..1000.0f64),
            which in 0usize..5,
            factor in 1.0..10.0f64,
        ) {
            let l = p.len();
            let c1 = cut.min(l);
            let costs = p.partition_costs(Partition::new(c1, (c1 + 1).min(l))).unwrap();
            let base = TierCapacities::three_tier(caps[0], caps[1], caps[2], caps[3], caps[4]);
            let mut more = base;
            let slot = match which {
                0 => &mut more.mobile,
                1 => &mut more.edge,
                2 => &mut more.cloud,
                3 => &mut more.rate1,
                _ => &mut more.rate2,
            };
            *slot = slot.map(|v| v * factor);
            prop_assert!(static_delay(&costs, &more).unwrap() <= static_delay(&costs, &base).unwrap());
        }
    }
}
