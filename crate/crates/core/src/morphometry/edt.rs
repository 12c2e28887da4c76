use super::MorphError;
use crate::mask::BinaryMask;

/// Exact distances from every pixel to the nearest skeleton pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMap {
    width: usize,
    height: usize,
    /// Squared distances; `u64::MAX` everywhere when there is no skeleton pixel.
    squared: Vec<u64>,
}

impl DistanceMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn squared(&self) -> &[u64] {
        &self.squared
    }

    pub fn squared_at(&self, x: usize, y: usize) -> u64 {
        self.squared[y * self.width + x]
    }

    /// Euclidean distance; infinite when there is no skeleton pixel at all.
    pub fn at(&self, x: usize, y: usize) -> f64 {
        match self.squared_at(x, y) {
            u64::MAX => f64::INFINITY,
            d => (d as f64).sqrt(),
        }
    }

    pub fn distances(&self) -> Vec<f64> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .map(|(x, y)| self.at(x, y))
            .collect()
    }
}

/// Exact Euclidean distance transform to the skeleton pixels.
///
/// Two separable passes over integer squared distances: a column scan for
/// the vertical distance to the nearest site, then a row-wise lower
/// envelope of parabolas with integer intersection points.
pub fn edt_to_skeleton(domain: &BinaryMask, skeleton: &BinaryMask) -> Result<DistanceMap, MorphError> {
    domain.ensure_same_dims(skeleton)?;
    let (w, h) = skeleton.dims();
    if skeleton.is_empty() {
        if !domain.is_empty() {
            return Err(MorphError::EmptySkeleton);
        }
        return Ok(DistanceMap {
            width: w,
            height: h,
            squared: vec![u64::MAX; w * h],
        });
    }

    // larger than any in-image distance, small enough that its square fits
    let inf = (w + h + 1) as i64;
    let mut g = vec![0i64; w * h];
    for x in 0..w {
        g[x] = if skeleton.get(x, 0) { 0 } else { inf };
        for y in 1..h {
            g[y * w + x] = if skeleton.get(x, y) { 0 } else { g[(y - 1) * w + x] + 1 };
        }
        for y in (0..h.saturating_sub(1)).rev() {
            let below = g[(y + 1) * w + x];
            if below < g[y * w + x] {
                g[y * w + x] = below + 1;
            }
        }
    }

    let mut squared = vec![0u64; w * h];
    let mut s = vec![0usize; w];
    let mut t = vec![0i64; w];
    for y in 0..h {
        let row = &g[y * w..(y + 1) * w];
        let f = |x: i64, i: usize| (x - i as i64).pow(2) + row[i].pow(2);
        let sep = |i: usize, u: usize| {
            let (i64i, i64u) = (i as i64, u as i64);
            (i64u * i64u - i64i * i64i + row[u].pow(2) - row[i].pow(2)).div_euclid(2 * (i64u - i64i))
        };
        let mut q = 0usize;
        s[0] = 0;
        t[0] = 0;
        for u in 1..w {
            while f(t[q], s[q]) > f(t[q], u) {
                if q == 0 {
                    break;
                }
                q -= 1;
            }
            if f(t[q], s[q]) > f(t[q], u) {
                // q == 0 and u dominates everywhere
                s[0] = u;
                continue;
            }
            let wsep = 1 + sep(s[q], u);
            if wsep < w as i64 {
                q += 1;
                s[q] = u;
                t[q] = wsep;
            }
        }
        for x in (0..w).rev() {
            let d = f(x as i64, s[q]);
            squared[y * w + x] = d as u64;
            if q > 0 && x as i64 == t[q] {
                q -= 1;
            }
        }
    }
    Ok(DistanceMap {
        width: w,
        height: h,
        squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centre_site_on_3x3() {
        let domain = BinaryMask::from_fn(3, 3, |_, _| true);
        let sk = BinaryMask::from_fn(3, 3, |x, y| x == 1 && y == 1);
        let d = edt_to_skeleton(&domain, &sk).unwrap();
        assert_eq!(d.squared(), &[2, 1, 2, 1, 0, 1, 2, 1, 2]);
        assert_eq!(d.at(0, 0), 2f64.sqrt());
    }

    #[test]
    fn empty_skeleton_cases() {
        let sk = BinaryMask::new(4, 4);
        let domain = BinaryMask::from_fn(4, 4, |x, _| x == 0);
        assert!(matches!(edt_to_skeleton(&domain, &sk), Err(MorphError::EmptySkeleton)));
        let d = edt_to_skeleton(&BinaryMask::new(4, 4), &sk).unwrap();
        assert!(d.distances().iter().all(|v| v.is_infinite()));
    }
}
