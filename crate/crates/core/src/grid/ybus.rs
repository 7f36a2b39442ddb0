use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::case::NetworkCase;

/// Bus admittance matrix in case bus order, stored row-wise sparse. The
/// semantics are those of the dense n×n matrix; absent entries are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    n: usize,
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Nonzero pattern of row `i`, columns ascending.
    pub fn row(&self, i: usize) -> &[(usize, Complex64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        match self.rows[i].binary_search_by_key(&j, |&(c, _)| c) {
            Ok(k) => self.rows[i][k].1,
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, y) in row {
                m[(i, j)] = y;
            }
        }
        m
    }

    /// I = Y·V
    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, y)| y * v[j]).sum())
            .collect()
    }
}

/// Two-port admittances of an in-service branch: (y_ff, y_ft, y_tf, y_tt).
pub(crate) fn branch_admittance(
    r: f64,
    x: f64,
    b: f64,
    tap: f64,
    shift: f64,
) -> (Complex64, Complex64, Complex64, Complex64) {
    let ys = Complex64::new(1.0, 0.0) / Complex64::new(r, x);
    let half_b = Complex64::new(0.0, b / 2.0);
    let t = Complex64::from_polar(tap, shift);
    let ytt = ys + half_b;
    let yff = ytt / (tap * tap);
    let yft = -ys / t.conj();
    let ytf = -ys / t;
    (yff, yft, ytf, ytt)
}

/// Builds the bus admittance matrix. Off-nominal taps sit on the from side;
/// out-of-service branches contribute nothing.
pub fn build_ybus(case: &NetworkCase) -> AdmittanceMatrix {
    let n = case.buses.len();
    let index = case.bus_index();
    let mut acc: Vec<BTreeMap<usize, Complex64>> = vec![BTreeMap::new(); n];

    for br in case.branches.iter().filter(|b| b.in_service) {
        let (Some(&f), Some(&t)) = (index.get(&br.from_bus), index.get(&br.to_bus)) else {
            continue;
        };
        let (yff, yft, ytf, ytt) = branch_admittance(br.r, br.x, br.b_charging, br.tap, br.shift);
        *acc[f].entry(f).or_default() += yff;
        *acc[f].entry(t).or_default() += yft;
        *acc[t].entry(f).or_default() += ytf;
        *acc[t].entry(t).or_default() += ytt;
    }
    for (i, bus) in case.buses.iter().enumerate() {
        if bus.g_shunt != 0.0 || bus.b_shunt != 0.0 {
            *acc[i].entry(i).or_default() += Complex64::new(bus.g_shunt, bus.b_shunt);
        }
    }
    AdmittanceMatrix {
        n,
        rows: acc.into_iter().map(|m| m.into_iter().collect()).collect(),
    }
}
