//! Synthetic generators, the digits loader and stratified splitting.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{streams, Matrix, RngStream, Vector};
use crate::training::{Dataset, Split};

pub const DIGITS_FEATURES: usize = 64;
pub const DIGITS_CLASSES: usize = 10;

/// Latent target coefficients: `y = tanh(a·z) + ½ (b·z)² + noise`.
pub const LATENT_A: [f64; 3] = [1.0, -0.5, 0.8];
pub const LATENT_B: [f64; 3] = [0.6, 0.4, -0.5];
/// Ambient noise added to `x = E z` in the latent regression data.
pub const LATENT_X_NOISE: f64 = 0.1;

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
    Matrix::new(rows, cols, rng.gaussian(rows * cols)).expect("sized buffer")
}

/// `X ~ N(0, I_d)`, `β* ~ N(0, I_d)`, `y = Xβ* + σε`.
pub fn gen_linreg(
    seed: u64,
    n_train: usize,
    n_test: usize,
    d: usize,
    noise_sigma: f64,
) -> Result<(Dataset, Dataset, Vector)> {
    let mut rng = RngStream::new(seed, streams::DATA);
    let beta = rng.gaussian(d);
    let mut make = |n: usize, split| {
        let x = gaussian_matrix(n, d, &mut rng);
        let y: Vector = x
            .matvec(&beta)
            .into_iter()
            .map(|v| v + noise_sigma * rng.standard_normal())
            .collect();
        Dataset::regression(x, y, split)
    };
    let train = make(n_train, Split::Train)?;
    let test = make(n_test, Split::Test)?;
    Ok((train, test, beta))
}

#[derive(Clone, Debug)]
pub struct LatentData {
    pub train: Dataset,
    pub test: Dataset,
    /// `d × k` embedding.
    pub embedding: Matrix,
    pub z_train: Matrix,
    pub z_test: Matrix,
}

/// `z ~ N(0, I_k)`, `x = E z + 0.1 ε` with `E` entries `N(0, 1/k)`, and
/// `y = tanh(a·z) + ½ (b·z)² + σ ε`. Only the first three latent
/// coordinates enter the target.
pub fn gen_latent_regression(
    seed: u64,
    d: usize,
    k: usize,
    n_train: usize,
    n_test: usize,
    noise_sigma: f64,
) -> Result<LatentData> {
    gen_latent_regression_with(
        seed,
        d,
        k,
        n_train,
        n_test,
        noise_sigma,
        LATENT_X_NOISE,
        None,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn gen_latent_regression_with(
    seed: u64,
    d: usize,
    k: usize,
    n_train: usize,
    n_test: usize,
    noise_sigma: f64,
    x_noise: f64,
    embedding: Option<Matrix>,
) -> Result<LatentData> {
    if k == 0 || k > d {
        return Err(Error::Config(format!(
            "latent dimension {k} for ambient {d}"
        )));
    }
    let mut rng = RngStream::new(seed, streams::DATA);
    let e = match embedding {
        Some(e) if e.shape() == (d, k) => e,
        Some(_) => return Err(Error::Shape("embedding must be d x k".into())),
        None => gaussian_matrix(d, k, &mut rng).scale(1.0 / (k as f64).sqrt()),
    };
    let target = |z: &[f64]| {
        let a: f64 = z.iter().zip(LATENT_A).map(|(zi, ai)| zi * ai).sum();
        let b: f64 = z.iter().zip(LATENT_B).map(|(zi, bi)| zi * bi).sum();
        a.tanh() + 0.5 * b * b
    };
    let mut make = |n: usize, split| -> Result<(Dataset, Matrix)> {
        let z = gaussian_matrix(n, k, &mut rng);
        let mut x = z.matmul_t(&e);
        for i in 0..n {
            for v in x.row_mut(i) {
                *v += x_noise * rng.standard_normal();
            }
        }
        let y = z
            .row_iter()
            .map(|zi| target(zi) + noise_sigma * rng.standard_normal())
            .collect();
        Ok((Dataset::regression(x, y, split)?, z))
    };
    let (train, z_train) = make(n_train, Split::Train)?;
    let (test, z_test) = make(n_test, Split::Test)?;
    Ok(LatentData {
        train,
        test,
        embedding: e,
        z_train,
        z_test,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixtureSpec {
    pub d: usize,
    pub k: usize,
    pub classes: usize,
    /// Distance between neighbouring class means in latent space.
    pub separation: f64,
    pub latent_noise: f64,
    pub ambient_noise: f64,
}

/// Class means on a regular polygon (edge `separation`) in the first two
/// latent coordinates, latent noise `N(0, latent_noise² I_k)`, embedding
/// `E` with `N(0, 1)` entries and ambient noise `N(0, ambient_noise² I_d)`.
/// Labels cycle through the classes, so every split is balanced.
pub fn gen_mixture_classification(
    seed: u64,
    spec: MixtureSpec,
    n_train: usize,
    n_test: usize,
) -> Result<(Dataset, Dataset)> {
    let MixtureSpec {
        d,
        k,
        classes,
        separation,
        latent_noise,
        ambient_noise,
    } = spec;
    if k < 2 || k > d || classes < 2 {
        return Err(Error::Config(format!(
            "mixture needs 2 <= k <= d and at least two classes (k={k}, d={d}, C={classes})"
        )));
    }
    let mut rng = RngStream::new(seed, streams::DATA);
    let e = gaussian_matrix(d, k, &mut rng);
    let radius = separation / (2.0 * (std::f64::consts::PI / classes as f64).sin());
    let means: Vec<Vector> = (0..classes)
        .map(|c| {
            let t = std::f64::consts::FRAC_PI_2 + std::f64::consts::TAU * c as f64 / classes as f64;
            let mut m = vec![0.0; k];
            m[0] = radius * t.cos();
            m[1] = radius * t.sin();
            m
        })
        .collect();
    let mut make = |n: usize, split| {
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let mut x = Matrix::zeros(n, d);
        for (i, &c) in labels.iter().enumerate() {
            let z: Vector = means[c]
                .iter()
                .map(|m| m + latent_noise * rng.standard_normal())
                .collect();
            let xi = e.matvec(&z);
            for (dst, v) in x.row_mut(i).iter_mut().zip(xi) {
                *dst = v + ambient_noise * rng.standard_normal();
            }
        }
        Dataset::classification(x, labels, classes, split)
    };
    let train = make(n_train, Split::Train)?;
    let test = make(n_test, Split::Test)?;
    Ok((train, test))
}

/// Test indices for an 80/20 split stratified by class.
///
/// The test set has `⌈N/5⌉` rows. Each class first contributes
/// `⌊n_c/5⌋`; the remaining slots go to the classes with the largest
/// remainders `n_c mod 5`, lower class index first on ties. Members are
/// drawn uniformly within each class.
pub fn stratified_split(
    labels: &[usize],
    n_classes: usize,
    rng: &mut RngStream,
) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let n_test = labels.len().div_ceil(5);
    let mut quota: Vec<usize> = by_class.iter().map(|c| c.len() / 5).collect();
    let mut order: Vec<usize> = (0..n_classes).collect();
    order.sort_by_key(|&c| std::cmp::Reverse(by_class[c].len() % 5));
    let extra = n_test - quota.iter().sum::<usize>();
    for &c in order.iter().take(extra) {
        quota[c] += 1;
    }
    let mut test = Vec::with_capacity(n_test);
    for (members, q) in by_class.iter_mut().zip(quota) {
        rng.shuffle(members);
        test.extend_from_slice(&members[..q]);
    }
    test.sort_unstable();
    let mut is_test = vec![false; labels.len()];
    test.iter().for_each(|&i| is_test[i] = true);
    let train = (0..labels.len()).filter(|&i| !is_test[i]).collect();
    (train, test)
}

/// Rows of 64 pixel values and a label in `0..10`.
pub fn read_digits_csv(path: &Path) -> Result<(Matrix, Vec<usize>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::DataFile(format!("{}: {e}", path.display())))?;
    parse_digits_csv(&text)
}

pub fn parse_digits_csv(text: &str) -> Result<(Matrix, Vec<usize>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::DataFile(format!("line {}: {e}", line + 1)))?;
        if rec.len() != DIGITS_FEATURES + 1 {
            return Err(Error::DataFile(format!(
                "line {}: expected {} columns, found {}",
                line + 1,
                DIGITS_FEATURES + 1,
                rec.len()
            )));
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            // a non-numeric first line is a header
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::DataFile(format!("line {}: {e}", line + 1))),
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DataFile(format!(
                "line {}: non-finite value",
                line + 1
            )));
        }
        let label = values[DIGITS_FEATURES];
        if label.fract() != 0.0 || !(0.0..DIGITS_CLASSES as f64).contains(&label) {
            return Err(Error::DataFile(format!(
                "line {}: label {label} outside 0..{DIGITS_CLASSES}",
                line + 1
            )));
        }
        labels.push(label as usize);
        rows.push(values[..DIGITS_FEATURES].to_vec());
    }
    if rows.is_empty() {
        return Err(Error::DataFile("no data rows".into()));
    }
    Ok((Matrix::from_rows(&rows)?, labels))
}

/// Stratified train/test split of a labelled digits matrix.
pub fn split_digits(x: Matrix, labels: Vec<usize>, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train_idx, test_idx) = stratified_split(
        &labels,
        DIGITS_CLASSES,
        &mut RngStream::new(seed, streams::SPLIT),
    );
    let all = Dataset::classification(x, labels, DIGITS_CLASSES, Split::Train)?;
    let train = all.subset(&train_idx);
    let mut test = all.subset(&test_idx);
    test.split = Split::Test;
    Ok((train, test))
}

pub fn load_digits(path: &Path, seed: u64) -> Result<(Dataset, Dataset)> {
    let (x, labels) = read_digits_csv(path)?;
    split_digits(x, labels, seed)
}

// Seven-segment strokes on the 8×8 grid: top, upper-left, upper-right,
// middle, lower-left, lower-right, bottom.
const SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, false, true, true, true],
    [false, false, true, false, false, true, false],
    [true, false, true, true, true, false, true],
    [true, false, true, true, false, true, true],
    [false, true, true, true, false, true, false],
    [true, true, false, true, false, true, true],
    [true, true, false, true, true, true, true],
    [true, false, true, false, false, true, false],
    [true, true, true, true, true, true, true],
    [true, true, true, true, false, true, true],
];

fn stroke_pixels(segment: usize) -> Vec<(usize, usize)> {
    let (rows, cols): (Vec<usize>, Vec<usize>) = match segment {
        0 => (vec![1], (2..6).collect()),
        1 => ((1..4).collect(), vec![2]),
        2 => ((1..4).collect(), vec![5]),
        3 => (vec![4], (2..6).collect()),
        4 => ((4..7).collect(), vec![2]),
        5 => ((4..7).collect(), vec![5]),
        _ => (vec![6], (2..6).collect()),
    };
    rows.iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect()
}

/// Stroke-like 8×8 images with intensities in `0..=16`, for running the
/// digits pipeline without the real data file. Classes cycle, giving
/// balanced counts.
pub fn synthetic_digits(seed: u64, n: usize) -> (Matrix, Vec<usize>) {
    let mut rng = RngStream::new(seed, streams::DATA);
    let mut x = Matrix::zeros(n, DIGITS_FEATURES);
    let labels: Vec<usize> = (0..n).map(|i| i % DIGITS_CLASSES).collect();
    for (i, &label) in labels.iter().enumerate() {
        let shift_c = rng.below(3) as isize - 1;
        let shift_r = rng.below(2) as isize;
        let ink = 10.0 + 6.0 * rng.uniform();
        let mut img = [[0.0f64; 8]; 8];
        for (s, _) in SEGMENTS[label].iter().enumerate().filter(|(_, on)| **on) {
            for (r, c) in stroke_pixels(s) {
                let (r, c) = (r as isize + shift_r, c as isize + shift_c);
                if (0..8).contains(&r) && (0..8).contains(&c) {
                    img[r as usize][c as usize] = ink;
                    // soft spill onto the right-hand neighbour
                    if c + 1 < 8 {
                        let v = &mut img[r as usize][(c + 1) as usize];
                        *v = v.max(0.4 * ink);
                    }
                }
            }
        }
        for (p, v) in x.row_mut(i).iter_mut().enumerate() {
            let noisy = img[p / 8][p % 8] + 1.5 * rng.standard_normal();
            *v = noisy.round().clamp(0.0, 16.0);
        }
    }
    (x, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::fit_ols;

    #[test]
    fn noiseless_linreg_recovers_beta() {
        let (train, _, beta) = gen_linreg(3, 100, 10, 5, 0.0).unwrap();
        let b = fit_ols(&train).unwrap();
        assert!(b.iter().zip(&beta).all(|(a, c)| (a - c).abs() < 1e-10));
    }

    #[test]
    fn linreg_ols_concentrates() {
        let (train, _, beta) = gen_linreg(11, 1000, 200, 10, 0.1).unwrap();
        let b = fit_ols(&train).unwrap();
        let err = b
            .iter()
            .zip(&beta)
            .map(|(a, c)| (a - c).abs())
            .fold(0.0, f64::max);
        assert!(err <= 0.05, "{err}");
    }

    #[test]
    fn latent_target_is_function_of_x_without_noise() {
        let data = gen_latent_regression_with(0, 3, 3, 20, 5, 0.0, 0.0, Some(Matrix::identity(3)))
            .unwrap();
        for (xi, yi) in data.train.x.row_iter().zip(data.train.targets().unwrap()) {
            let a: f64 = xi.iter().zip(LATENT_A).map(|(v, c)| v * c).sum();
            let b: f64 = xi.iter().zip(LATENT_B).map(|(v, c)| v * c).sum();
            assert!((a.tanh() + 0.5 * b * b - yi).abs() < 1e-15);
        }
    }

    fn quadratic_features(m: &Matrix) -> Matrix {
        let k = m.cols();
        let mut cols = Vec::new();
        for r in m.row_iter() {
            let mut f = vec![1.0];
            f.extend_from_slice(r);
            for i in 0..k {
                for j in i..k {
                    f.push(r[i] * r[j]);
                }
            }
            cols.push(f);
        }
        Matrix::from_rows(&cols).unwrap()
    }

    fn quad_fit_mse(train: &Matrix, y: &[f64], test: &Matrix, yt: &[f64]) -> f64 {
        let ds = Dataset::regression(quadratic_features(train), y.to_vec(), Split::Train).unwrap();
        let beta = fit_ols(&ds).unwrap();
        let pred = quadratic_features(test).matvec(&beta);
        pred.iter()
            .zip(yt)
            .map(|(p, t)| (p - t).powi(2))
            .sum::<f64>()
            / yt.len() as f64
    }

    #[test]
    fn latent_coordinates_beat_random_projections() {
        let data = gen_latent_regression(5, 8, 3, 2000, 500, 0.1).unwrap();
        let (y, yt) = (data.train.targets().unwrap(), data.test.targets().unwrap());
        let on_z = quad_fit_mse(&data.z_train, y, &data.z_test, yt);
        let mut rng = RngStream::new(9, 1);
        for _ in 0..5 {
            let r = Matrix::new(3, 8, rng.gaussian(24)).unwrap();
            let on_proj =
                quad_fit_mse(&data.train.x.matmul_t(&r), y, &data.test.x.matmul_t(&r), yt);
            assert!(on_z < on_proj, "{on_z} vs {on_proj}");
        }
    }

    #[test]
    fn mixture_balanced_and_separable_without_noise() {
        let spec = MixtureSpec {
            d: 20,
            k: 3,
            classes: 3,
            separation: 10.0,
            latent_noise: 0.0,
            ambient_noise: 0.0,
        };
        let (train, _) = gen_mixture_classification(1, spec, 30, 9).unwrap();
        let labels = train.labels().unwrap();
        for c in 0..3 {
            assert_eq!(labels.iter().filter(|&&l| l == c).count(), 10);
        }
        // identical points within a class
        assert_eq!(train.x.row(0), train.x.row(3));
    }

    #[test]
    fn stratified_split_arithmetic() {
        let labels: Vec<usize> = (0..10).collect();
        let (train, test) = stratified_split(&labels, 10, &mut RngStream::new(0, 4));
        assert_eq!((train.len(), test.len()), (8, 2));

        let counts = [178, 182, 177, 183, 181, 182, 181, 179, 174, 180];
        let labels: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        assert_eq!(labels.len(), 1797);
        let (train, test) = stratified_split(&labels, 10, &mut RngStream::new(0, 4));
        assert_eq!((train.len(), test.len()), (1437, 360));
        for (c, &n) in counts.iter().enumerate() {
            let t = test.iter().filter(|&&i| labels[i] == c).count();
            assert!(t == n / 5 || t == n / 5 + 1);
        }
    }

    fn digits_line(label: &str) -> String {
        let mut cells = vec!["0"; 64];
        cells[10] = "16";
        cells.push(label);
        cells.join(",")
    }

    #[test]
    fn digits_parsing() {
        let header = (0..64)
            .map(|i| format!("pixel_{i}"))
            .chain(["label".to_string()])
            .collect::<Vec<_>>()
            .join(",");
        let body: Vec<String> = (0..10).map(|c| digits_line(&c.to_string())).collect();
        let with = format!("{header}\n{}\n", body.join("\n"));
        let without = format!("{}\n", body.join("\n"));
        let (a, la) = parse_digits_csv(&with).unwrap();
        let (b, lb) = parse_digits_csv(&without).unwrap();
        assert_eq!((a.rows(), la), (10, lb));
        assert_eq!(a, b);
        let (train, test) = split_digits(a, (0..10).collect(), 0).unwrap();
        assert_eq!((train.n(), test.n()), (8, 2));

        assert!(matches!(
            parse_digits_csv(&digits_line("10")),
            Err(Error::DataFile(_))
        ));
        assert!(matches!(
            parse_digits_csv("1,2,3\n"),
            Err(Error::DataFile(_))
        ));
        let bad = format!("{}\n{}", digits_line("1"), digits_line("x"));
        assert!(matches!(parse_digits_csv(&bad), Err(Error::DataFile(_))));
    }

    #[test]
    fn synthetic_digits_shape() {
        let (x, labels) = synthetic_digits(0, 200);
        assert_eq!(x.shape(), (200, 64));
        assert!(x
            .as_slice()
            .iter()
            .all(|v| (0.0..=16.0).contains(v) && v.fract() == 0.0));
        assert_eq!(labels.iter().filter(|&&l| l == 7).count(), 20);
    }
}
