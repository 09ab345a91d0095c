//! Pinhole camera with world-to-camera extrinsics.

use crate::num::Real;

/// Pinhole camera. The world frame is z-up; the camera frame looks along +z.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera<T> {
    pub view_id: String,
    /// Row-major intrinsic matrix.
    pub intrinsics: [[T; 3]; 3],
    /// Row-major world-to-camera rotation.
    pub rotation: [[T; 3]; 3],
    pub translation: [T; 3],
    /// (width, height) in pixels.
    pub image_size: (u32, u32),
}

/// A world point projected into an image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection<T> {
    pub u: T,
    pub v: T,
    pub depth: T,
    /// Positive depth and inside the image rectangle.
    pub hit: bool,
}

fn mat_vec<T: Real>(m: &[[T; 3]; 3], v: [T; 3]) -> [T; 3] {
    [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

pub fn det3<T: Real>(m: &[[T; 3]; 3]) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

impl<T: Real> Camera<T> {
    pub fn to_camera_frame(&self, world: [T; 3]) -> [T; 3] {
        let r = mat_vec(&self.rotation, world);
        [r[0] + self.translation[0], r[1] + self.translation[1], r[2] + self.translation[2]]
    }

    pub fn project(&self, world: [T; 3]) -> Projection<T> {
        let c = self.to_camera_frame(world);
        let depth = c[2];
        let h = mat_vec(&self.intrinsics, c);
        let (u, v) = (h[0] / depth, h[1] / depth);
        let (w_px, h_px) = (T::from_u32(self.image_size.0).unwrap(), T::from_u32(self.image_size.1).unwrap());
        let hit = depth > T::zero()
            && u.is_finite()
            && v.is_finite()
            && u >= T::zero()
            && u < w_px
            && v >= T::zero()
            && v < h_px;
        Projection { u, v, depth, hit }
    }

    /// Largest entry of `|RᵀR - I|`.
    pub fn orthonormality_error(&self) -> T {
        let r = &self.rotation;
        let mut worst = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let dot = r[0][i] * r[0][j] + r[1][i] * r[1][j] + r[2][i] * r[2][j];
                let target = if i == j { T::one() } else { T::zero() };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        let c = |x: T| U::lit(x.as_f64());
        Camera {
            view_id: self.view_id.clone(),
            intrinsics: self.intrinsics.map(|row| row.map(c)),
            rotation: self.rotation.map(|row| row.map(c)),
            translation: self.translation.map(c),
            image_size: self.image_size,
        }
    }
}

/// Rotation taking a z-up vehicle frame (x forward, y left) into a camera frame
/// (x right, y down, z forward) for a camera yawed by `yaw` about the world z-axis.
pub fn vehicle_to_camera_rotation(yaw: f64) -> [[f64; 3]; 3] {
    let (s, c) = yaw.sin_cos();
    // Camera axes expressed in world coordinates.
    let forward = [c, s, 0.0];
    let right = [s, -c, 0.0];
    let down = [0.0, 0.0, -1.0];
    [right, down, forward]
}
