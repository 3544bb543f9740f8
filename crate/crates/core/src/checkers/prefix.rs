//! The hole-prefix order on certification orders.

use crate::certification::{Decision, Payload};
use crate::ids::{Slot, TxnId};
use crate::message::Log;

/// Position of the last non-hole entry, 1-based; 0 if there is none.
pub fn length<T>(seq: &[Option<T>]) -> usize {
    seq.iter().rposition(Option::is_some).map_or(0, |i| i + 1)
}

/// `beta ≺ alpha`: equal lengths, and every entry `beta` has agrees with
/// `alpha`. Holes in `beta` are unconstrained.
pub fn prefix_holes<T: PartialEq>(beta: &[Option<T>], alpha: &[Option<T>]) -> bool {
    let n = length(beta);
    n == length(alpha) && beta[..n].iter().zip(alpha).all(|(b, a)| b.is_none() || b == a)
}

/// What the order relation compares at a slot: `txn`, `vote` and `payload`.
/// Phase and decision are not part of it.
pub type SlotView = (TxnId, Decision, Payload);

/// Slots `1..=k` of `log` as a sequence with holes.
pub fn log_prefix(log: &Log, k: Slot) -> Vec<Option<SlotView>> {
    let mut out = vec![None; k as usize];
    for (j, en) in log.range(1..=k) {
        out[(*j - 1) as usize] = Some((en.txn, en.vote, en.payload.clone()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sequences() {
        let a = [Some(1), Some(2), Some(3)];
        assert!(prefix_holes(&a, &a));
    }

    #[test]
    fn holes_only_needs_equal_length() {
        let a = [Some(1), Some(2), Some(3)];
        assert!(prefix_holes(&[None, None, Some(3)], &a));
        assert!(!prefix_holes(&[None, Some(2), None], &a));
        let empty: [Option<i32>; 3] = [None, None, None];
        assert!(prefix_holes(&empty, &[None, None]));
        assert!(!prefix_holes(&empty, &a));
    }

    #[test]
    fn mismatched_entry_fails() {
        assert!(!prefix_holes(&[Some(1), Some(9), Some(3)], &[Some(1), Some(2), Some(3)]));
    }

    #[test]
    fn trailing_holes_do_not_count_towards_length() {
        assert!(prefix_holes(&[Some(1), None, None], &[Some(1)]));
        assert_eq!(length::<u8>(&[]), 0);
    }
}
