use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::case::{BusKind, NetworkCase};
use super::sparse;
use super::ybus::{branch_admittance, build_ybus, AdmittanceMatrix};
use super::GridError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowOptions {
    pub tolerance: f64,
    pub max_iter: usize,
    /// V = 1∠0 at PQ buses, setpoint magnitudes at PV/slack. Otherwise the
    /// case voltages seed the iteration.
    pub flat_start: bool,
    /// PV→PQ switching on generator reactive limits.
    pub enforce_q_limits: bool,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iter: 20,
            flat_start: true,
            enforce_q_limits: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    /// Complex bus voltages in case bus order (p.u.).
    pub v: Vec<Complex64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: f64,
    pub p_slack: f64,
    pub q_slack: f64,
    /// Complex power entering each branch at its (from, to) ends; zero when out of service.
    pub branch_flows: Vec<(Complex64, Complex64)>,
    pub total_loss: f64,
    /// PV buses switched to PQ by reactive-limit enforcement.
    #[serde(default)]
    pub q_limited: Vec<u32>,
}

impl PowerFlowSolution {
    pub fn v_mag(&self) -> Vec<f64> {
        self.v.iter().map(|v| v.norm()).collect()
    }
}

/// Largest |ΔP| over non-slack buses and |ΔQ| over PQ buses at voltages `v`.
pub fn evaluate_mismatch(case: &NetworkCase, v: &[Complex64]) -> f64 {
    let ybus = build_ybus(case);
    let kinds = case.effective_kinds();
    let (p_spec, q_spec) = specified_injections(case, &kinds);
    let s = injections(&ybus, v);
    let mut worst = 0.0f64;
    for i in 0..v.len() {
        if kinds[i] != BusKind::Slack {
            worst = worst.max((p_spec[i] - s[i].re).abs());
        }
        if kinds[i] == BusKind::PQ {
            worst = worst.max((q_spec[i] - s[i].im).abs());
        }
    }
    worst
}

pub(crate) fn injections(ybus: &AdmittanceMatrix, v: &[Complex64]) -> Vec<Complex64> {
    ybus.mul_vec(v).iter().zip(v).map(|(i, vi)| vi * i.conj()).collect()
}

fn specified_injections(case: &NetworkCase, kinds: &[BusKind]) -> (Vec<f64>, Vec<f64>) {
    let gen = case.bus_generation();
    let p = case.buses.iter().zip(&gen).map(|(b, g)| g.p - b.p_load).collect();
    let q = case
        .buses
        .iter()
        .zip(&gen)
        .zip(kinds)
        .map(|((b, g), k)| {
            let q_gen = if *k == BusKind::PQ { g.q } else { 0.0 };
            q_gen - b.q_load + b.q_comp
        })
        .collect();
    (p, q)
}

fn initial_voltages(case: &NetworkCase, flat: bool) -> Vec<Complex64> {
    case.buses
        .iter()
        .map(|b| {
            if flat && b.kind != BusKind::Slack {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::from_polar(b.v_mag, b.v_ang)
            }
        })
        .collect()
}

pub fn solve_power_flow(case: &NetworkCase, options: &PowerFlowOptions) -> Result<PowerFlowSolution, GridError> {
    let v0 = initial_voltages(case, options.flat_start);
    let ybus = build_ybus(case);
    solve_with(case, &ybus, options, v0)
}

/// Warm start from explicit voltages (setpoint magnitudes still apply at PV
/// and slack buses).
pub fn solve_power_flow_from(
    case: &NetworkCase,
    options: &PowerFlowOptions,
    v0: &[Complex64],
) -> Result<PowerFlowSolution, GridError> {
    let ybus = build_ybus(case);
    solve_with(case, &ybus, options, v0.to_vec())
}

pub(crate) fn solve_with(
    case: &NetworkCase,
    ybus: &AdmittanceMatrix,
    options: &PowerFlowOptions,
    v0: Vec<Complex64>,
) -> Result<PowerFlowSolution, GridError> {
    let mut kinds = case.effective_kinds();
    let mut fixed_q: Vec<Option<f64>> = vec![None; kinds.len()];
    let mut v = v0;
    let mut total_iterations = 0;
    // Outer loop only repeats when reactive limits switch PV buses to PQ.
    for _ in 0..=kinds.len() {
        let outcome = newton(case, ybus, options, &kinds, &fixed_q, v)?;
        total_iterations += outcome.iterations;
        v = outcome.v;
        if !outcome.converged || !options.enforce_q_limits {
            return Ok(finish(
                case,
                ybus,
                v,
                &fixed_q,
                outcome.converged,
                total_iterations,
                outcome.max_mismatch,
            ));
        }
        let switched = switch_limited_generators(case, ybus, &v, &mut kinds, &mut fixed_q);
        if !switched {
            return Ok(finish(
                case,
                ybus,
                v,
                &fixed_q,
                true,
                total_iterations,
                outcome.max_mismatch,
            ));
        }
    }
    unreachable!("each pass switches at least one PV bus")
}

struct NewtonOutcome {
    v: Vec<Complex64>,
    converged: bool,
    iterations: usize,
    max_mismatch: f64,
}

fn newton(
    case: &NetworkCase,
    ybus: &AdmittanceMatrix,
    options: &PowerFlowOptions,
    kinds: &[BusKind],
    fixed_q: &[Option<f64>],
    mut v: Vec<Complex64>,
) -> Result<NewtonOutcome, GridError> {
    let n = kinds.len();
    let gen = case.bus_generation();
    let (p_spec, mut q_spec) = specified_injections(case, kinds);
    for (i, q) in fixed_q.iter().enumerate() {
        if let Some(q) = q {
            q_spec[i] = q - case.buses[i].q_load + case.buses[i].q_comp;
        }
    }
    for i in 0..n {
        if kinds[i] != BusKind::PQ {
            let mag = gen[i].v_set.unwrap_or(case.buses[i].v_mag);
            v[i] = Complex64::from_polar(mag, v[i].arg());
        }
    }

    // Unknowns numbered bus by bus in minimum-degree order: θ then |V|.
    let adjacency: Vec<Vec<usize>> = (0..n).map(|i| ybus.row(i).iter().map(|&(j, _)| j).collect()).collect();
    let order = sparse::min_degree_order(&adjacency);
    let mut theta_var = vec![usize::MAX; n];
    let mut vm_var = vec![usize::MAX; n];
    let mut dim = 0;
    for &i in &order {
        if kinds[i] != BusKind::Slack {
            theta_var[i] = dim;
            dim += 1;
        }
        if kinds[i] == BusKind::PQ {
            vm_var[i] = dim;
            dim += 1;
        }
    }

    let mut entries = Vec::with_capacity(8 * n + 16 * ybus_nnz(ybus));
    let mut rhs = vec![0.0; dim];
    let mut iterations = 0;
    loop {
        let current = ybus.mul_vec(&v);
        let mut worst = 0.0f64;
        for i in 0..n {
            let s = v[i] * current[i].conj();
            if theta_var[i] != usize::MAX {
                let d = p_spec[i] - s.re;
                rhs[theta_var[i]] = d;
                worst = worst.max(d.abs());
            }
            if vm_var[i] != usize::MAX {
                let d = q_spec[i] - s.im;
                rhs[vm_var[i]] = d;
                worst = worst.max(d.abs());
            }
        }
        if !worst.is_finite() {
            return Ok(NewtonOutcome {
                v,
                converged: false,
                iterations,
                max_mismatch: f64::INFINITY,
            });
        }
        if worst <= options.tolerance {
            return Ok(NewtonOutcome {
                v,
                converged: true,
                iterations,
                max_mismatch: worst,
            });
        }
        if iterations >= options.max_iter {
            return Ok(NewtonOutcome {
                v,
                converged: false,
                iterations,
                max_mismatch: worst,
            });
        }

        entries.clear();
        let j = Complex64::new(0.0, 1.0);
        for i in 0..n {
            let (pr, qr) = (theta_var[i], vm_var[i]);
            if pr == usize::MAX {
                continue;
            }
            let vi = v[i];
            for &(k, y) in ybus.row(i) {
                let vk = v[k];
                let unit_k = vk / vk.norm();
                let (ds_dtheta, ds_dvm) = if k == i {
                    (
                        j * vi * (current[i] - y * vi).conj(),
                        vi * (y * unit_k).conj() + current[i].conj() * unit_k,
                    )
                } else {
                    (-j * vi * (y * vk).conj(), vi * (y * unit_k).conj())
                };
                if theta_var[k] != usize::MAX {
                    entries.push((pr, theta_var[k], ds_dtheta.re));
                    if qr != usize::MAX {
                        entries.push((qr, theta_var[k], ds_dtheta.im));
                    }
                }
                if vm_var[k] != usize::MAX {
                    entries.push((pr, vm_var[k], ds_dvm.re));
                    if qr != usize::MAX {
                        entries.push((qr, vm_var[k], ds_dvm.im));
                    }
                }
            }
        }
        iterations += 1;
        sparse::solve(dim, &entries, &mut rhs).map_err(|_| GridError::SingularJacobian { iteration: iterations })?;
        for i in 0..n {
            let mut mag = v[i].norm();
            let mut ang = v[i].arg();
            if theta_var[i] != usize::MAX {
                ang += rhs[theta_var[i]];
            }
            if vm_var[i] != usize::MAX {
                mag += rhs[vm_var[i]];
            }
            v[i] = Complex64::from_polar(mag, ang);
        }
    }
}

fn ybus_nnz(ybus: &AdmittanceMatrix) -> usize {
    (0..ybus.n()).map(|i| ybus.row(i).len()).sum()
}

/// Moves PV buses whose generator reactive output violates its limits to PQ
/// with Q pinned at the violated limit. Returns whether anything changed.
fn switch_limited_generators(
    case: &NetworkCase,
    ybus: &AdmittanceMatrix,
    v: &[Complex64],
    kinds: &mut [BusKind],
    fixed_q: &mut [Option<f64>],
) -> bool {
    let gen = case.bus_generation();
    let s = injections(ybus, v);
    let mut changed = false;
    for i in 0..kinds.len() {
        if kinds[i] != BusKind::PV {
            continue;
        }
        let q_gen = s[i].im + case.buses[i].q_load - case.buses[i].q_comp;
        let limit = if q_gen > gen[i].q_max + 1e-9 {
            Some(gen[i].q_max)
        } else if q_gen < gen[i].q_min - 1e-9 {
            Some(gen[i].q_min)
        } else {
            None
        };
        if let Some(q) = limit {
            kinds[i] = BusKind::PQ;
            fixed_q[i] = Some(q);
            changed = true;
        }
    }
    changed
}

fn finish(
    case: &NetworkCase,
    ybus: &AdmittanceMatrix,
    v: Vec<Complex64>,
    fixed_q: &[Option<f64>],
    converged: bool,
    iterations: usize,
    max_mismatch: f64,
) -> PowerFlowSolution {
    let index = case.bus_index();
    let s = injections(ybus, &v);
    let (p_slack, q_slack) = match case.slack_index() {
        Some(k) => (
            s[k].re + case.buses[k].p_load,
            s[k].im + case.buses[k].q_load - case.buses[k].q_comp,
        ),
        None => (0.0, 0.0),
    };
    let zero = Complex64::new(0.0, 0.0);
    let branch_flows: Vec<(Complex64, Complex64)> = case
        .branches
        .iter()
        .map(|br| {
            if !br.in_service {
                return (zero, zero);
            }
            let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
            let (yff, yft, ytf, ytt) = branch_admittance(br.r, br.x, br.b_charging, br.tap, br.shift);
            let sf = v[f] * (yff * v[f] + yft * v[t]).conj();
            let st = v[t] * (ytf * v[f] + ytt * v[t]).conj();
            (sf, st)
        })
        .collect();
    let total_loss = branch_flows.iter().map(|(a, b)| a.re + b.re).sum();
    PowerFlowSolution {
        v,
        converged,
        iterations,
        max_mismatch,
        p_slack,
        q_slack,
        branch_flows,
        total_loss,
        q_limited: case
            .buses
            .iter()
            .zip(fixed_q)
            .filter(|(_, q)| q.is_some())
            .map(|(b, _)| b.id)
            .collect(),
    }
}
