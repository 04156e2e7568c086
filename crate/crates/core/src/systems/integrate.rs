use super::model::euclid;
use super::{DisturbanceSignal, Dynamics, SystemError, SystemModel};
use crate::csvfmt::fmt_f64;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::ops::ControlFlow;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeBracket {
    /// Last sample time with a finite state below the threshold.
    pub last_finite: f64,
    /// First sample time over the threshold (or non-finite).
    pub first_over: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub signal: DisturbanceSignal,
    pub escaped: Option<EscapeBracket>,
}

impl Trajectory {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory holds t=0")
    }

    pub fn max_norm(&self) -> f64 {
        self.states.iter().fold(0.0_f64, |m, x| m.max(euclid(x.as_slice())))
    }

    /// CSV with header `t,x_1..x_n,d`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let n = self.states.first().map_or(0, |x| x.len());
        let mut cw = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.push("d".into());
        cw.write_record(&header)?;
        for (t, x) in self.times.iter().zip(&self.states) {
            let mut row = vec![fmt_f64(*t)];
            row.extend(x.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(self.signal.value_at(*t)));
            cw.write_record(&row)?;
        }
        cw.flush()?;
        Ok(())
    }
}

/// Outcome of an observed run.
#[derive(Debug, Clone)]
pub struct RunEnd {
    pub t: f64,
    pub state: DVector<f64>,
    pub escaped: Option<EscapeBracket>,
    /// The observer asked to stop before the horizon.
    pub stopped: bool,
}

fn validate(model: &SystemModel, t: f64, x: &DVector<f64>, step: f64) -> Result<(), SystemError> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(SystemError::InvalidArgument(format!("horizon must be finite and nonnegative, got {t}")));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(SystemError::InvalidArgument(format!("step must be positive, got {step}")));
    }
    if x.len() != model.dim() {
        return Err(SystemError::Dimension {
            expected: model.dim(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SystemError::InvalidArgument("initial state is not finite".into()));
    }
    Ok(())
}

/// Segment ends: disturbance breakpoints (field models), checkpoints and the
/// horizon. Each segment is split into equal steps no longer than `step`.
fn mandatory_points(d: &DisturbanceSignal, t: f64, extra: &[f64], linear: bool) -> Vec<f64> {
    let mut pts: Vec<f64> = Vec::new();
    if !linear {
        pts.extend(d.breakpoints_in(0.0, t));
    }
    pts.extend(extra.iter().copied().filter(|&s| s > 0.0 && s < t));
    pts.push(t);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Core integrator. Calls `observe(t, x)` at t = 0 and after every step;
/// `checkpoints` are hit exactly.
pub fn run_observed(
    model: &SystemModel,
    t: f64,
    x0: &DVector<f64>,
    d: &DisturbanceSignal,
    step: f64,
    checkpoints: &[f64],
    observe: &mut dyn FnMut(f64, &[f64]) -> ControlFlow<()>,
) -> Result<RunEnd, SystemError> {
    validate(model, t, x0, step)?;
    let threshold = model.explosion_threshold;
    if observe(0.0, x0.as_slice()).is_break() || t == 0.0 {
        return Ok(RunEnd {
            t: 0.0,
            state: x0.clone(),
            escaped: None,
            stopped: t > 0.0,
        });
    }
    match &model.dynamics {
        Dynamics::Field(field) => {
            let n = field.dim();
            let mut x = x0.as_slice().to_vec();
            let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
            let mut tmp = vec![0.0; n];
            let mut prev = vec![0.0; n];
            let mut a = 0.0;
            let mut t_prev = 0.0;
            for b in mandatory_points(d, t, checkpoints, false) {
                let dv = d.value_at(a);
                let m = ((b - a) / step * (1.0 - 1e-12)).ceil().max(1.0) as usize;
                let h = (b - a) / m as f64;
                for i in 0..m {
                    prev.copy_from_slice(&x);
                    rk4_step(field.as_ref(), &mut x, dv, h, &mut k, &mut tmp);
                    field.project(&prev, dv, h, &mut x);
                    let ti = if i + 1 == m { b } else { a + (i + 1) as f64 * h };
                    let nx = euclid(&x);
                    if !nx.is_finite() || nx > threshold {
                        return Ok(RunEnd {
                            t: ti,
                            state: DVector::from_vec(sanitize(x, threshold)),
                            escaped: Some(EscapeBracket {
                                last_finite: t_prev,
                                first_over: ti,
                            }),
                            stopped: false,
                        });
                    }
                    t_prev = ti;
                    if observe(ti, &x).is_break() {
                        return Ok(RunEnd {
                            t: ti,
                            state: DVector::from_vec(x),
                            escaped: None,
                            stopped: true,
                        });
                    }
                }
                a = b;
            }
            Ok(RunEnd {
                t,
                state: DVector::from_vec(x),
                escaped: None,
                stopped: false,
            })
        }
        Dynamics::Linear(lin) => {
            let mut x = x0.clone();
            let mut a = 0.0;
            for b in mandatory_points(d, t, checkpoints, true) {
                let m = ((b - a) / step * (1.0 - 1e-12)).ceil().max(1.0) as usize;
                let h = (b - a) / m as f64;
                for i in 0..m {
                    let t0 = a + i as f64 * h;
                    let t1 = if i + 1 == m { b } else { a + (i + 1) as f64 * h };
                    let next = lin.propagate(&x, d, t0, t1)?;
                    let nx = euclid(next.as_slice());
                    if !nx.is_finite() || nx > threshold {
                        return Ok(RunEnd {
                            t: t1,
                            state: DVector::from_vec(sanitize(next.as_slice().to_vec(), threshold)),
                            escaped: Some(EscapeBracket {
                                last_finite: t0,
                                first_over: t1,
                            }),
                            stopped: false,
                        });
                    }
                    x = next;
                    if observe(t1, x.as_slice()).is_break() {
                        return Ok(RunEnd {
                            t: t1,
                            state: x,
                            escaped: None,
                            stopped: true,
                        });
                    }
                }
                a = b;
            }
            Ok(RunEnd {
                t,
                state: x,
                escaped: None,
                stopped: false,
            })
        }
    }
}

fn sanitize(mut x: Vec<f64>, threshold: f64) -> Vec<f64> {
    for v in &mut x {
        if !v.is_finite() {
            *v = if v.is_nan() { threshold } else { threshold.copysign(*v) };
        }
    }
    x
}

fn rk4_step(f: &dyn super::VectorField, x: &mut [f64], d: f64, h: f64, k: &mut [Vec<f64>; 4], tmp: &mut [f64]) {
    let n = x.len();
    f.eval(x, d, &mut k[0]);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k[0][i];
    }
    f.eval(tmp, d, &mut k[1]);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k[1][i];
    }
    f.eval(tmp, d, &mut k[2]);
    for i in 0..n {
        tmp[i] = x[i] + h * k[2][i];
    }
    f.eval(tmp, d, &mut k[3]);
    for i in 0..n {
        x[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
    }
}

/// Sampled trajectory on `[0, t]`; escapes end it early with a bracket.
pub fn flow(
    model: &SystemModel,
    t: f64,
    x: &DVector<f64>,
    d: &DisturbanceSignal,
    step: f64,
) -> Result<Trajectory, SystemError> {
    let mut times = Vec::new();
    let mut states = Vec::new();
    let end = run_observed(model, t, x, d, step, &[], &mut |ti, xi| {
        times.push(ti);
        states.push(DVector::from_column_slice(xi));
        ControlFlow::Continue(())
    })?;
    if let Some(br) = end.escaped {
        // keep the overflowing sample so the bracket is visible in the data
        times.push(br.first_over);
        states.push(end.state);
    }
    Ok(Trajectory {
        times,
        states,
        signal: d.clone(),
        escaped: end.escaped,
    })
}

/// Final state only; `Err`-free escapes are returned as `Ok(None)` plus bracket.
pub fn flow_final(
    model: &SystemModel,
    t: f64,
    x: &DVector<f64>,
    d: &DisturbanceSignal,
    step: f64,
) -> Result<(DVector<f64>, Option<EscapeBracket>), SystemError> {
    let end = run_observed(model, t, x, d, step, &[], &mut |_, _| ControlFlow::Continue(()))?;
    Ok((end.state, end.escaped))
}

/// States at the requested (sorted, nonnegative) times.
pub fn flow_at(
    model: &SystemModel,
    times: &[f64],
    x: &DVector<f64>,
    d: &DisturbanceSignal,
    step: f64,
) -> Result<(Vec<DVector<f64>>, Option<EscapeBracket>), SystemError> {
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(SystemError::InvalidArgument("sample times must be sorted".into()));
    }
    let horizon = times.last().copied().unwrap_or(0.0);
    let mut out = Vec::with_capacity(times.len());
    let mut next = 0;
    let end = run_observed(model, horizon, x, d, step, times, &mut |ti, xi| {
        while next < times.len() && times[next] == ti {
            out.push(DVector::from_column_slice(xi));
            next += 1;
        }
        ControlFlow::Continue(())
    })?;
    Ok((out, end.escaped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{DisturbanceSet, FnField};
    use approx::assert_relative_eq;

    fn decay() -> SystemModel {
        SystemModel::from_field("decay", FnField::new(1, |x, _, o| o[0] = -x[0]), DisturbanceSet::Trivial)
    }

    #[test]
    fn linear_decay_closed_form() {
        let tr = flow(&decay(), 1.0, &DVector::from_element(1, 1.0), &DisturbanceSignal::constant(0.0), 1e-3).unwrap();
        assert_relative_eq!(tr.final_state()[0], (-1.0f64).exp(), epsilon = 1e-8);
        assert_eq!(tr.final_time(), 1.0);
        assert!(tr.escaped.is_none());
    }

    #[test]
    fn zero_horizon_is_identity() {
        let x = DVector::from_element(1, 0.123456789);
        let tr = flow(&decay(), 0.0, &x, &DisturbanceSignal::constant(0.0), 0.1).unwrap();
        assert_eq!(tr.states.len(), 1);
        assert_eq!(tr.states[0], x);
    }

    #[test]
    fn blow_up_is_bracketed() {
        let m = SystemModel::from_field("sq", FnField::new(1, |x, _, o| o[0] = x[0] * x[0]), DisturbanceSet::Trivial);
        // x' = x², x(0)=1 escapes at t=1
        let tr = flow(&m, 2.0, &DVector::from_element(1, 1.0), &DisturbanceSignal::constant(0.0), 1e-3).unwrap();
        let br = tr.escaped.unwrap();
        assert!(br.last_finite < br.first_over);
        assert!((br.first_over - 1.0).abs() < 1e-2, "{br:?}");
        assert!(tr.states.iter().all(|x| x.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn breakpoints_are_respected() {
        let m = SystemModel::from_field("dx", FnField::new(1, |x, d, o| o[0] = d * x[0]), DisturbanceSet::Real);
        let d = DisturbanceSignal::new(vec![0.0, 0.3333], vec![1.0, -1.0]).unwrap();
        let (x, _) = flow_final(&m, 1.0, &DVector::from_element(1, 1.0), &d, 0.1).unwrap();
        assert_relative_eq!(x[0], (0.3333 - 0.6667f64).exp(), epsilon = 1e-6);
    }

    #[test]
    fn flow_at_hits_requested_times() {
        let (xs, _) = flow_at(&decay(), &[0.0, 0.25, 0.7], &DVector::from_element(1, 1.0), &DisturbanceSignal::constant(0.0), 0.01).unwrap();
        assert_eq!(xs.len(), 3);
        assert_relative_eq!(xs[1][0], (-0.25f64).exp(), epsilon = 1e-7);
        assert_relative_eq!(xs[2][0], (-0.7f64).exp(), epsilon = 1e-7);
    }

    #[test]
    fn trajectory_csv_header() {
        let tr = flow(&decay(), 0.2, &DVector::from_element(1, 1.0), &DisturbanceSignal::constant(0.0), 0.1).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,x_1,d\n"));
        assert_eq!(s.lines().count(), 4);
    }
}
