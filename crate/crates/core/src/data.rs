//! Functional datasets of bivariate responses and the grid of projection directions.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `n` subjects observed at the same `J` grid points, each carrying a bivariate
/// response per grid point and `p` covariates.
///
/// Responses are stored subject-major: entry `i * J + j` holds `y_i(t_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    subject_ids: Vec<String>,
    t_grid: Vec<f64>,
    responses: Vec<[f64; 2]>,
    covariates: DMatrix<f64>,
}

impl FunctionalDataset {
    pub fn new(t_grid: Vec<f64>, responses: Vec<[f64; 2]>, covariates: DMatrix<f64>) -> Result<Self> {
        let ids = (0..covariates.nrows()).map(|i| (i + 1).to_string()).collect();
        Self::with_ids(ids, t_grid, responses, covariates)
    }

    pub fn with_ids(
        subject_ids: Vec<String>,
        t_grid: Vec<f64>,
        responses: Vec<[f64; 2]>,
        covariates: DMatrix<f64>,
    ) -> Result<Self> {
        let n = covariates.nrows();
        let j = t_grid.len();
        if n == 0 || j == 0 || covariates.ncols() == 0 {
            return Err(Error::Validation("dataset must have subjects, grid points and covariates".into()));
        }
        if subject_ids.len() != n {
            return Err(Error::Validation("subject id count does not match covariate rows".into()));
        }
        if responses.len() != n * j {
            return Err(Error::Validation(format!(
                "expected {} responses for {n} subjects x {j} grid points, got {}",
                n * j,
                responses.len()
            )));
        }
        for (k, &t) in t_grid.iter().enumerate() {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Validation(format!("grid point t = {t} outside [0, 1]")));
            }
            if k > 0 && t <= t_grid[k - 1] {
                return Err(Error::Validation("grid must be strictly increasing".into()));
            }
        }
        if responses.iter().flatten().chain(covariates.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite value in dataset".into()));
        }
        Ok(FunctionalDataset { subject_ids, t_grid, responses, covariates })
    }

    pub fn n_subjects(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn n_grid(&self) -> usize {
        self.t_grid.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn responses(&self) -> &[[f64; 2]] {
        &self.responses
    }

    pub fn response(&self, subject: usize, grid: usize) -> [f64; 2] {
        self.responses[subject * self.n_grid() + grid]
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    /// Restriction to the given subjects, in the given order.
    pub fn subset(&self, subjects: &[usize]) -> FunctionalDataset {
        let j = self.n_grid();
        let mut responses = Vec::with_capacity(subjects.len() * j);
        for &i in subjects {
            responses.extend_from_slice(&self.responses[i * j..(i + 1) * j]);
        }
        FunctionalDataset {
            subject_ids: subjects.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            t_grid: self.t_grid.clone(),
            responses,
            covariates: self.covariates.select_rows(subjects),
        }
    }

    /// Reads the long CSV layout `subject_id,t,y1,y2,x1,...,xp`, one row per
    /// subject and grid point. Every subject must share the same grid.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let names: Vec<&str> = headers.iter().collect();
        for (pos, expected) in ["subject_id", "t", "y1", "y2"].iter().enumerate() {
            if names.get(pos) != Some(expected) {
                return Err(Error::Validation(format!(
                    "column {} must be `{expected}` (header: {})",
                    pos + 1,
                    names.join(",")
                )));
            }
        }
        let p = names.len() - 4;
        if p == 0 {
            return Err(Error::Validation("no covariate columns x1..xp".into()));
        }
        for (k, name) in names[4..].iter().enumerate() {
            if *name != format!("x{}", k + 1) {
                return Err(Error::Validation(format!(
                    "covariate column {} must be named `x{}`, found `{name}`",
                    k + 5,
                    k + 1
                )));
            }
        }

        struct Row {
            line: u64,
            t: f64,
            y: [f64; 2],
            x: Vec<f64>,
        }
        let mut order: Vec<String> = Vec::new();
        let mut by_subject: HashMap<String, Vec<Row>> = HashMap::new();
        let mut problems = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != names.len() {
                problems.push(format!("line {line}: expected {} fields, got {}", names.len(), rec.len()));
                continue;
            }
            let mut values = Vec::with_capacity(rec.len() - 1);
            let mut bad = None;
            for (k, field) in rec.iter().enumerate().skip(1) {
                match field.parse::<f64>() {
                    Ok(v) if v.is_finite() => values.push(v),
                    _ => {
                        bad = Some(names[k]);
                        break;
                    }
                }
            }
            if let Some(col) = bad {
                problems.push(format!("line {line}: missing or non-numeric `{col}`"));
                continue;
            }
            let id = rec[0].to_string();
            if !by_subject.contains_key(&id) {
                order.push(id.clone());
            }
            by_subject.entry(id).or_default().push(Row {
                line,
                t: values[0],
                y: [values[1], values[2]],
                x: values[3..].to_vec(),
            });
        }
        if order.is_empty() && problems.is_empty() {
            return Err(Error::Validation("dataset has no rows".into()));
        }

        let mut grid: Option<Vec<f64>> = None;
        let mut responses = Vec::new();
        let mut covariates = Vec::new();
        for id in &order {
            let rows = by_subject.get_mut(id).expect("subject present");
            rows.sort_by(|a, b| a.t.total_cmp(&b.t));
            let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
            match &grid {
                None => grid = Some(ts),
                Some(g) => {
                    let same = g.len() == ts.len() && g.iter().zip(&ts).all(|(a, b)| (a - b).abs() <= 1e-12);
                    if !same {
                        problems
                            .push(format!("subject `{id}` (line {}): grid differs from first subject", rows[0].line));
                        continue;
                    }
                }
            }
            let x0 = &rows[0].x;
            for r in rows.iter().skip(1) {
                if r.x.iter().zip(x0).any(|(a, b)| (a - b).abs() > 1e-12) {
                    problems.push(format!("line {}: covariates of subject `{id}` change across grid points", r.line));
                }
            }
            covariates.extend_from_slice(x0);
            responses.extend(rows.iter().map(|r| r.y));
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems.join("; ")));
        }
        let grid = grid.unwrap_or_default();
        let n = order.len();
        let covariates = DMatrix::from_row_slice(n, p, &covariates);
        Self::with_ids(order, grid, responses, covariates)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let p = self.n_covariates();
        let mut header = vec!["subject_id".to_string(), "t".into(), "y1".into(), "y2".into()];
        header.extend((1..=p).map(|k| format!("x{k}")));
        w.write_record(&header)?;
        for i in 0..self.n_subjects() {
            for (j, t) in self.t_grid.iter().enumerate() {
                let y = self.response(i, j);
                let mut rec = vec![self.subject_ids[i].clone(), t.to_string(), y[0].to_string(), y[1].to_string()];
                rec.extend((0..p).map(|k| self.covariates[(i, k)].to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Projects every response onto the unit direction `s`, giving `sᵀ y_i(t_j)`
/// in subject-major order.
pub fn project_responses(data: &FunctionalDataset, s: [f64; 2]) -> Result<Vec<f64>> {
    let norm = s[0].hypot(s[1]);
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("direction ({}, {}) is not unit length", s[0], s[1])));
    }
    Ok(data.responses.iter().map(|y| s[0] * y[0] + s[1] * y[1]).collect())
}

/// `d` unit directions equally spaced over `[−π, π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionGrid {
    angles: Vec<f64>,
    directions: Vec<[f64; 2]>,
}

impl DirectionGrid {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("direction count must be positive"));
        }
        let angles: Vec<f64> = (0..d).map(|r| -PI + 2.0 * PI * r as f64 / d as f64).collect();
        let directions = angles.iter().map(|a| [a.cos(), a.sin()]).collect();
        Ok(DirectionGrid { angles, directions })
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn directions(&self) -> &[[f64; 2]] {
        &self.directions
    }

    pub fn direction(&self, r: usize) -> [f64; 2] {
        self.directions[r]
    }

    /// Chord distance between adjacent directions, `2 sin(π/d)`.
    pub fn spacing(&self) -> f64 {
        2.0 * (PI / self.len() as f64).sin()
    }

    /// Euclidean distance between directions `a` and `b`.
    pub fn chord(&self, a: usize, b: usize) -> f64 {
        let (u, v) = (self.directions[a], self.directions[b]);
        (u[0] - v[0]).hypot(u[1] - v[1])
    }

    /// Indices of `count` directions spread evenly around the grid.
    pub fn spread(&self, count: usize) -> Vec<usize> {
        let d = self.len();
        if count >= d {
            return (0..d).collect();
        }
        (0..count).map(|k| k * d / count).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny() -> FunctionalDataset {
        FunctionalDataset::new(
            vec![0.0, 1.0],
            vec![[1.0, 2.0], [3.0, 4.0], [1.0, 1.0], [-1.0, 0.5]],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 1.0, 2.0]),
        )
        .unwrap()
    }

    #[test]
    fn projections() {
        let d = tiny();
        assert_eq!(project_responses(&d, [1.0, 0.0]).unwrap(), vec![1.0, 3.0, 1.0, -1.0]);
        assert_eq!(project_responses(&d, [0.0, 1.0]).unwrap(), vec![2.0, 4.0, 1.0, 0.5]);
        let h = 0.5f64.sqrt();
        assert_abs_diff_eq!(project_responses(&d, [h, h]).unwrap()[2], 2f64.sqrt(), epsilon = 1e-15);
        assert!(project_responses(&d, [1.0, 1.0]).is_err());
    }

    #[test]
    fn grid_geometry() {
        let g = DirectionGrid::new(100).unwrap();
        for s in g.directions() {
            assert_abs_diff_eq!(s[0].hypot(s[1]), 1.0, epsilon = 1e-12);
        }
        for r in 0..100 {
            assert_abs_diff_eq!(g.chord(r, (r + 1) % 100), g.spacing(), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(g.angles()[0], -PI);
        assert_eq!(g.spread(8).len(), 8);
    }

    #[test]
    fn csv_round_trip() {
        let d = tiny();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = FunctionalDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn csv_missing_column() {
        let text = "subject_id,t,y1,x1\n1,0,1,1\n";
        assert!(matches!(FunctionalDataset::read_csv(text.as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn csv_reports_offending_rows() {
        let text = "subject_id,t,y1,y2,x1\n1,0,1,,1\n1,1,1,2,1\n2,0,1,2,1\n2,0.5,1,2,1\n";
        let err = FunctionalDataset::read_csv(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(err.contains("`y2`"), "{err}");
    }

    #[test]
    fn csv_infers_covariate_count() {
        let text = "subject_id,t,y1,y2,x1,x2,x3\na,0.5,1,2,1,0,3\na,0.1,1,2,1,0,3\n";
        let d = FunctionalDataset::read_csv(text.as_bytes()).unwrap();
        assert_eq!(d.n_covariates(), 3);
        assert_eq!(d.t_grid(), &[0.1, 0.5]);
    }
}
