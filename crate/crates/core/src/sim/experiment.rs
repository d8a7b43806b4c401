use rand::Rng;
use rand_distr::StandardNormal;

use super::scenario::{ExperimentModel, Regime};
use super::SimError;
use crate::wire::{DataPoint, DEVICE_TAG, ROOM_TAG};

pub const ATOM_FIELD: &str = "atom_number";
pub const CLOUD_H_FIELD: &str = "cloud_H";
pub const CLOUD_V_FIELD: &str = "cloud_V";

/// The model with `base_atoms` and `shot_noise` replaced by whichever regime
/// targeting it is active `elapsed_s` into the run.
pub fn effective_model(model: &ExperimentModel, regimes: &[Regime], elapsed_s: f64) -> ExperimentModel {
    let mut m = model.clone();
    if let Some(r) = regimes.iter().find(|r| r.target == model.name && r.contains(elapsed_s)) {
        m.base_atoms = r.base.unwrap_or(m.base_atoms);
        m.shot_noise = r.noise_std.unwrap_or(m.shot_noise);
    }
    m
}

/// One experimental cycle. `deviation(signal)` is the environment's offset
/// from nominal at the cycle time.
///
/// `N = base + Σ sᵢ·Δᵢ + shot`, and each cloud position is
/// `base + s·Δ(imaging) + noise`.
pub fn experiment_cycle<R: Rng + ?Sized>(
    model: &ExperimentModel,
    deviation: impl Fn(&str) -> Option<f64>,
    t_ns: i64,
    rng: &mut R,
) -> Result<DataPoint, SimError> {
    let dev = |s: &str| deviation(s).ok_or_else(|| SimError::UnknownSignal(s.into()));
    let z: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
    let mut n = model.base_atoms + model.shot_noise * z[0];
    for s in &model.atom_sensitivity {
        n += s.per_unit * dev(&s.signal)?;
    }
    let mut p = DataPoint::new(model.measurement.clone())
        .tag(ROOM_TAG, model.room.clone())
        .tag(DEVICE_TAG, model.device.clone())
        .field(ATOM_FIELD, n)
        .at(t_ns);
    for (field, pos, z) in [(CLOUD_H_FIELD, &model.cloud_h, z[1]), (CLOUD_V_FIELD, &model.cloud_v, z[2])] {
        if let Some(pm) = pos {
            p = p.field(field, pm.base + pm.per_unit * dev(&pm.signal)? + pm.noise_std * z);
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::{PositionModel, Sensitivity};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> ExperimentModel {
        ExperimentModel {
            name: "bec".into(),
            room: "Lab02".into(),
            device: "Exp01".into(),
            cycle_s: 30.0,
            base_atoms: 2.5,
            shot_noise: 0.0,
            atom_sensitivity: vec![Sensitivity {
                signal: "temp".into(),
                per_unit: -0.4,
            }],
            cloud_h: Some(PositionModel {
                signal: "imaging".into(),
                per_unit: 7.0,
                base: 100.0,
                noise_std: 0.0,
            }),
            cloud_v: None,
            measurement: "experiment".into(),
        }
    }

    #[test]
    fn nominal_environment_gives_base_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = experiment_cycle(&model(), |_| Some(0.0), 5, &mut rng).unwrap();
        assert_eq!(p.fields[ATOM_FIELD], 2.5);
        assert_eq!(p.fields[CLOUD_H_FIELD], 100.0);
        assert!(!p.fields.contains_key(CLOUD_V_FIELD));
        assert_eq!(p.timestamp, Some(5));
        assert_eq!(p.tags[ROOM_TAG], "Lab02");
    }

    #[test]
    fn imaging_offset_shifts_position_by_sensitivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = experiment_cycle(&model(), |s| Some(if s == "imaging" { 1.0 } else { 0.0 }), 0, &mut rng).unwrap();
        assert_eq!(p.fields[CLOUD_H_FIELD], 107.0);
        assert_eq!(p.fields[ATOM_FIELD], 2.5);
    }

    #[test]
    fn missing_signal_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = experiment_cycle(&model(), |_| None, 0, &mut rng).unwrap_err();
        assert!(matches!(err, SimError::UnknownSignal(_)));
    }

    #[test]
    fn regime_overrides_base_and_noise() {
        let r = Regime {
            label: "stable".into(),
            target: "bec".into(),
            start_s: 10.0,
            end_s: 20.0,
            base: Some(4.0),
            noise_std: Some(0.1),
            ..Regime::default()
        };
        let m = effective_model(&model(), std::slice::from_ref(&r), 15.0);
        assert_eq!((m.base_atoms, m.shot_noise), (4.0, 0.1));
        let m = effective_model(&model(), &[r], 20.0);
        assert_eq!(m.base_atoms, 2.5);
    }
}
