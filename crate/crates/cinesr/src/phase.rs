//! Cardiac phase code: each frame index maps to a scalar in [-1, 1] via a
//! piecewise cosine over the cycle. Contraction (end-diastole to
//! end-systole) runs the first half-period down to -1; relaxation runs the
//! second half-period back up to +1.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// One cardiac cycle: end-diastole frame, end-systole frame, cycle length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardiacCycleSpec {
    /// End-diastole frame index within the cycle.
    pub ed: u32,
    /// End-systole frame index within the cycle.
    pub es: u32,
    /// Frames per cycle.
    pub t_cycle: u32,
}

impl CardiacCycleSpec {
    pub fn new(ed: u32, es: u32, t_cycle: u32) -> Result<Self> {
        let spec = CardiacCycleSpec { ed, es, t_cycle };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_cycle < 2 {
            return Err(Error::Config(format!(
                "cycle length must be >= 2, got t_cycle={}",
                self.t_cycle
            )));
        }
        if self.ed >= self.t_cycle {
            return Err(Error::Config(format!(
                "ed must satisfy 0 <= ed < t_cycle, got ed={} t_cycle={}",
                self.ed, self.t_cycle
            )));
        }
        if self.es >= self.t_cycle {
            return Err(Error::Config(format!(
                "es must satisfy 0 <= es < t_cycle, got es={} t_cycle={}",
                self.es, self.t_cycle
            )));
        }
        if self.ed == self.es {
            return Err(Error::Config(format!(
                "ed and es must differ, got ed=es={}",
                self.ed
            )));
        }
        Ok(())
    }

    /// Systole duration in frames, measured cyclically from ED to ES.
    /// Always in 1..=t_cycle-1 for a valid spec.
    pub fn systole_len(&self) -> u32 {
        (self.es + self.t_cycle - self.ed) % self.t_cycle
    }

    /// Cycle-relative offset of frame `t` from ED, in 0..t_cycle.
    fn offset_from_ed(&self, t: i64) -> u32 {
        (t - self.ed as i64).rem_euclid(self.t_cycle as i64) as u32
    }
}

/// Phase code of one frame. Valid for any frame index; the index is
/// reduced modulo the cycle length relative to ED before branch selection,
/// so multi-cycle videos and warm-up frames evaluate on the same curve.
pub fn phase_at(t: i64, spec: &CardiacCycleSpec) -> Result<f64> {
    spec.validate()?;
    let sys = spec.systole_len() as f64;
    let t_cycle = spec.t_cycle as f64;
    let rel = spec.offset_from_ed(t);
    let value = if rel >= 1 && rel as f64 <= sys {
        // Contracting: ED < t <= ES on cycle-relative indices.
        (std::f64::consts::PI * rel as f64 / sys).cos()
    } else {
        // Relaxing: frames past ES climb back to +1 at the next ED.
        let after_es = (rel as f64 - sys).rem_euclid(t_cycle);
        (std::f64::consts::PI * (1.0 + after_es / (t_cycle - sys))).cos()
    };
    Ok(value)
}

/// Phase codes for `length` consecutive frames starting at `t_start`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCodeSequence {
    pub values: Vec<f64>,
    pub spec: CardiacCycleSpec,
    pub t_start: i64,
}

pub fn phase_sequence(
    spec: &CardiacCycleSpec,
    t_start: i64,
    length: usize,
) -> Result<PhaseCodeSequence> {
    if length == 0 {
        return Err(Error::Config("phase sequence length must be >= 1".into()));
    }
    let values = (0..length)
        .map(|i| phase_at(t_start + i as i64, spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(PhaseCodeSequence { values, spec: *spec, t_start })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(ed: u32, es: u32, t: u32) -> CardiacCycleSpec {
        CardiacCycleSpec::new(ed, es, t).unwrap()
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(CardiacCycleSpec::new(0, 0, 30).is_err());
        assert!(CardiacCycleSpec::new(30, 5, 30).is_err());
        assert!(CardiacCycleSpec::new(0, 30, 30).is_err());
        assert!(CardiacCycleSpec::new(0, 1, 1).is_err());
        let err = CardiacCycleSpec::new(3, 3, 10).unwrap_err();
        assert!(err.to_string().contains("ed"), "should name the invariant: {err}");
    }

    #[test]
    fn anchor_values() {
        let s = spec(0, 10, 30);
        // ES maps to cos(pi) = -1.
        assert!((phase_at(10, &s).unwrap() + 1.0).abs() < 1e-12);
        // Wrapping back to ED maps to cos(2*pi) = +1.
        assert!((phase_at(30, &s).unwrap() - 1.0).abs() < 1e-12);
        assert!((phase_at(0, &s).unwrap() - 1.0).abs() < 1e-12);
        // Halfway through systole: cos(pi/2) = 0.
        assert!(phase_at(5, &s).unwrap().abs() < 1e-12);
    }

    /// Hand evaluation of the relaxation branch:
    /// t=20, ES=10, T=30, ED=0 -> cos(pi * (1 + 10/20)) = 0.
    #[test]
    fn diastolic_branch_hand_value() {
        let s = spec(0, 10, 30);
        let expected = (std::f64::consts::PI * (1.0 + 10.0 / 20.0)).cos();
        assert!((phase_at(20, &s).unwrap() - expected).abs() < 1e-15);
        assert!(expected.abs() < 1e-12);
    }

    #[test]
    fn both_branches_agree_at_es() {
        // The systolic branch at ES gives cos(pi); the relaxing branch
        // evaluated with offset 0 gives cos(pi * (1 + 0)) — identical.
        for (ed, es, t) in [(0u32, 10u32, 30u32), (25, 5, 30), (3, 17, 20)] {
            let s = spec(ed, es, t);
            let sys = s.systole_len() as f64;
            let systolic = (std::f64::consts::PI * sys / sys).cos();
            let diastolic = (std::f64::consts::PI * (1.0 + 0.0 / (t as f64 - sys))).cos();
            assert_eq!(systolic, diastolic);
            assert!((phase_at(es as i64, &s).unwrap() + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wrapped_ed_es_ordering() {
        // ED late in the cycle, ES after the wrap.
        let s = spec(25, 5, 30);
        assert_eq!(s.systole_len(), 10);
        assert!((phase_at(5, &s).unwrap() + 1.0).abs() < 1e-12);
        assert!((phase_at(25, &s).unwrap() - 1.0).abs() < 1e-12);
        // Frame between ED and wrap is contracting.
        let a = phase_at(26, &s).unwrap();
        let b = phase_at(27, &s).unwrap();
        assert!(a > b);
    }

    /// The monotone-run oracle: enumerate one full cycle starting at ED+1
    /// and check strictly decreasing through ES, then strictly increasing
    /// until the wrap back to ED.
    #[test]
    fn monotone_runs_over_full_cycle() {
        for (ed, es, t) in [(0u32, 10u32, 30u32), (5, 20, 30), (25, 5, 30), (2, 9, 12)] {
            let s = spec(ed, es, t);
            let seq = phase_sequence(&s, ed as i64 + 1, t as usize).unwrap();
            let sys = s.systole_len() as usize;
            for i in 1..sys {
                assert!(
                    seq.values[i] < seq.values[i - 1],
                    "systole must decrease at {i} for ({ed},{es},{t})"
                );
            }
            for i in sys + 1..t as usize {
                assert!(
                    seq.values[i] > seq.values[i - 1],
                    "diastole must increase at {i} for ({ed},{es},{t})"
                );
            }
        }
    }

    #[test]
    fn sequence_of_one_matches_phase_at() {
        let s = spec(3, 9, 20);
        let seq = phase_sequence(&s, 7, 1).unwrap();
        assert_eq!(seq.values[0], phase_at(7, &s).unwrap());
    }

    #[test]
    fn double_cycle_repeats_exactly() {
        let s = spec(4, 13, 25);
        let seq = phase_sequence(&s, 0, 50).unwrap();
        for i in 0..25 {
            assert_eq!(seq.values[i], seq.values[i + 25], "bitwise periodicity");
        }
    }

    proptest! {
        /// Exact periodicity and range for arbitrary valid specs and frames.
        #[test]
        fn phase_is_periodic_and_bounded(
            t_cycle in 2u32..200,
            ed_raw in 0u32..200,
            es_raw in 0u32..200,
            t in 0i64..10_000,
        ) {
            let ed = ed_raw % t_cycle;
            let es = es_raw % t_cycle;
            prop_assume!(ed != es);
            let s = spec(ed, es, t_cycle);
            let a = phase_at(t, &s).unwrap();
            let b = phase_at(t + t_cycle as i64, &s).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }
}
