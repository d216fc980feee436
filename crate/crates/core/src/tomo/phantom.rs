use nalgebra::DVector;

/// One ellipse of the phantom: intensity, semi-axes, center and rotation
/// (degrees) in the `[-1, 1]²` frame.
#[derive(Debug, Clone, Copy)]
pub struct Ellipse {
    pub intensity: f64,
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub y0: f64,
    pub phi_deg: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi_deg.to_radians().sin_cos();
        let dx = x - self.x0;
        let dy = y - self.y0;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Modified Shepp-Logan table (Toft's contrast-enhanced intensities), which
/// keeps every pixel in `[0, 1]`.
pub const MODIFIED_SHEPP_LOGAN: [Ellipse; 10] = [
    Ellipse {
        intensity: 1.0,
        a: 0.69,
        b: 0.92,
        x0: 0.0,
        y0: 0.0,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: -0.8,
        a: 0.6624,
        b: 0.874,
        x0: 0.0,
        y0: -0.0184,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: -0.2,
        a: 0.11,
        b: 0.31,
        x0: 0.22,
        y0: 0.0,
        phi_deg: -18.0,
    },
    Ellipse {
        intensity: -0.2,
        a: 0.16,
        b: 0.41,
        x0: -0.22,
        y0: 0.0,
        phi_deg: 18.0,
    },
    Ellipse {
        intensity: 0.1,
        a: 0.21,
        b: 0.25,
        x0: 0.0,
        y0: 0.35,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: 0.1,
        a: 0.046,
        b: 0.046,
        x0: 0.0,
        y0: 0.1,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: 0.1,
        a: 0.046,
        b: 0.046,
        x0: 0.0,
        y0: -0.1,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: 0.1,
        a: 0.046,
        b: 0.023,
        x0: -0.08,
        y0: -0.605,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: 0.1,
        a: 0.023,
        b: 0.023,
        x0: 0.0,
        y0: -0.606,
        phi_deg: 0.0,
    },
    Ellipse {
        intensity: 0.1,
        a: 0.023,
        b: 0.046,
        x0: 0.06,
        y0: -0.605,
        phi_deg: 0.0,
    },
];

/// A `d×d` image stored row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomImage {
    pub d: usize,
    pub pixels: DVector<f64>,
}

impl PhantomImage {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.d + col]
    }
}

/// Center of pixel `(row, col)` in the `[-1, 1]²` frame, `y` pointing up.
pub fn pixel_center(d: usize, row: usize, col: usize) -> (f64, f64) {
    let x = (2 * col + 1) as f64 / d as f64 - 1.0;
    let y = 1.0 - (2 * row + 1) as f64 / d as f64;
    (x, y)
}

/// Rasterizes the modified Shepp-Logan phantom by pixel-center sampling.
pub fn shepp_logan(d: usize) -> PhantomImage {
    rasterize(&MODIFIED_SHEPP_LOGAN, d)
}

pub fn rasterize(ellipses: &[Ellipse], d: usize) -> PhantomImage {
    let mut pixels = DVector::zeros(d * d);
    for row in 0..d {
        for col in 0..d {
            let (x, y) = pixel_center(d, row, col);
            pixels[row * d + col] = ellipses
                .iter()
                .filter(|e| e.contains(x, y))
                .map(|e| e.intensity)
                .sum();
        }
    }
    PhantomImage { d, pixels }
}

/// Uniform disk of the given radius (in the `[-1, 1]²` frame) centered at the
/// origin.
pub fn disk(d: usize, radius: f64) -> PhantomImage {
    rasterize(
        &[Ellipse {
            intensity: 1.0,
            a: radius,
            b: radius,
            x0: 0.0,
            y0: 0.0,
            phi_deg: 0.0,
        }],
        d,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corner_is_background() {
        let p = shepp_logan(32);
        assert_eq!(p.get(0, 0), 0.0);
        assert_eq!(p.get(31, 31), 0.0);
    }

    #[test]
    fn values_in_unit_interval() {
        let p = shepp_logan(64);
        assert!(p.pixels.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        assert!(p.pixels.max() > 0.99);
    }

    #[test]
    fn center_pixel_matches_table_at_origin() {
        let d = 65;
        let p = shepp_logan(d);
        assert_eq!(pixel_center(d, 32, 32), (0.0, 0.0));
        // ellipses 1 and 2 cover the origin, the others do not: 1 - 0.8
        assert!((p.get(32, 32) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn mass_is_resolution_consistent() {
        let m64 = shepp_logan(64).pixels.sum() / (64.0 * 64.0);
        let m128 = shepp_logan(128).pixels.sum() / (128.0 * 128.0);
        assert!((m64 - m128).abs() / m128 < 0.02, "{m64} vs {m128}");
    }
}
