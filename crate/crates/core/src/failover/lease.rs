use super::state::{FailoverManagerState, RegionId, RegionServiceStatus};
use crate::num::Scalar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lease change asked for by the write region, which is the only region
/// that knows which followers are keeping up.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeaseRequest {
    Revoke {
        region: RegionId,
    },
    /// Re-grant a lease to `region` whose acknowledged position is
    /// `acked_lsn`; it must be within `max_lag` of `reference_lsn`.
    Readd {
        region: RegionId,
        acked_lsn: u64,
        reference_lsn: u64,
        max_lag: u64,
    },
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum LeaseDenied {
    #[error("{0} does not hold a read lease")]
    NotLeased(RegionId),
    #[error("revoking would leave {remaining} leases (write region included), below minimum durability {min}")]
    BelowMinimumDurability { remaining: usize, min: u32 },
    #[error("{0} is not an eligible read region")]
    NotEligible(RegionId),
    #[error("{region} is behind by {lag} entries")]
    Lagging { region: RegionId, lag: u64 },
}

/// Grants revocation of `region`'s read lease unless the remaining leases,
/// counting the write region's implicit one, would drop below the minimum
/// durability.
pub fn request_lease_revocation<F: Scalar>(
    state: &FailoverManagerState<F>,
    region: RegionId,
) -> Result<FailoverManagerState<F>, LeaseDenied> {
    if !state.active_leases.contains(&region) {
        return Err(LeaseDenied::NotLeased(region));
    }
    let remaining = state.active_leases.len(); // minus the revoked one, plus the write region
    if remaining < state.min_durability as usize {
        return Err(LeaseDenied::BelowMinimumDurability {
            remaining,
            min: state.min_durability,
        });
    }
    let mut next = state.clone();
    next.active_leases.remove(&region);
    Ok(next)
}

/// Restores `region`'s lease once it has caught up.
pub fn readd_lease<F: Scalar>(
    state: &FailoverManagerState<F>,
    region: RegionId,
    acked_lsn: u64,
    reference_lsn: u64,
    max_lag: u64,
) -> Result<FailoverManagerState<F>, LeaseDenied> {
    if region == state.write_region
        || state.status(region) != Some(RegionServiceStatus::ReadOnlyReplicationAllowed)
    {
        return Err(LeaseDenied::NotEligible(region));
    }
    let lag = reference_lsn.saturating_sub(acked_lsn);
    if lag > max_lag {
        return Err(LeaseDenied::Lagging { region, lag });
    }
    let mut next = state.clone();
    next.active_leases.insert(region);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::SchedulerStats;

    fn state(n: u16, min: u32) -> FailoverManagerState<f64> {
        FailoverManagerState::bootstrap((0..n).map(RegionId).collect(), min, SchedulerStats::default())
    }

    #[test]
    fn two_regions_min_one_permits_revocation() {
        let s = state(2, 1);
        let next = request_lease_revocation(&s, RegionId(1)).unwrap();
        assert!(next.active_leases.is_empty());
        next.check_invariants().unwrap();
    }

    #[test]
    fn revocation_below_floor_denied() {
        let s = state(2, 2);
        assert_eq!(
            request_lease_revocation(&s, RegionId(1)),
            Err(LeaseDenied::BelowMinimumDurability { remaining: 1, min: 2 })
        );
        assert_eq!(
            request_lease_revocation(&s, RegionId(0)),
            Err(LeaseDenied::NotLeased(RegionId(0)))
        );
    }

    #[test]
    fn readd_requires_catch_up() {
        let s = request_lease_revocation(&state(3, 1), RegionId(2)).unwrap();
        assert!(matches!(
            readd_lease(&s, RegionId(2), 90, 100, 0),
            Err(LeaseDenied::Lagging { lag: 10, .. })
        ));
        let back = readd_lease(&s, RegionId(2), 100, 100, 0).unwrap();
        assert!(back.active_leases.contains(&RegionId(2)));
        assert_eq!(readd_lease(&s, RegionId(0), 100, 100, 0), Err(LeaseDenied::NotEligible(RegionId(0))));
    }
}
