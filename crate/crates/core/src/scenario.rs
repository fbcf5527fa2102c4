//! Physical world of one Monte Carlo trial.
//!
//! A uniform rectangular array sits on the y-z plane. Its elements are split
//! into `B` contiguous subarrays (SAs) along the y-axis ordering. Users are
//! dropped uniformly in a rectangular cell in front of the array; each user
//! gets a per-SA large-scale gain (path loss plus log-normal shadowing,
//! averaged over the SA's elements) and a random visibility region drawn
//! independently per SA.
//!
//! Small-scale fading is not instantiated. Every protocol quantity downstream
//! depends only on the per-SA large-scale gains.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, ConfigError, Result};

/// Minimum subarray size that keeps massive-MIMO behavior inside each SA.
pub const MIN_SUBARRAY_ANTENNAS: usize = 50;

/// Consecutive rejected draws tolerated for a single user before giving up.
pub const PLACEMENT_BUDGET: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        self.distance_squared(other).sqrt()
    }

    pub fn distance_squared(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }
}

/// Uniform rectangular array on the y-z plane.
///
/// The first row of elements starts at `origin` and runs along the y-axis;
/// rows stack upward in z starting at height `height`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UraGeometry {
    pub m_y: usize,
    pub m_z: usize,
    pub spacing: f64,
    pub height: f64,
    pub origin: Point3,
}

impl Default for UraGeometry {
    fn default() -> Self {
        Self {
            m_y: 100,
            m_z: 5,
            spacing: 1.0,
            height: 12.0,
            origin: Point3::default(),
        }
    }
}

impl UraGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.m_y == 0 || self.m_z == 0 {
            return Err(ConfigError::EmptyArray { m_y: self.m_y, m_z: self.m_z });
        }
        if !(self.spacing > 0.0) || !self.spacing.is_finite() {
            return Err(ConfigError::BadSpacing(self.spacing));
        }
        if !(self.height >= 0.0) || !self.height.is_finite() {
            return Err(ConfigError::BadHeight(self.height));
        }
        Ok(())
    }

    /// Total number of elements `M = M_y * M_z`.
    pub fn antennas(&self) -> usize {
        self.m_y * self.m_z
    }

    pub fn length_y(&self) -> f64 {
        self.m_y as f64 * self.spacing
    }

    pub fn length_z(&self) -> f64 {
        self.m_z as f64 * self.spacing
    }

    /// Position of element `(m_y, m_z)`.
    ///
    /// Panics if either index is out of range.
    pub fn antenna_position(&self, m_y: usize, m_z: usize) -> Point3 {
        assert!(
            m_y < self.m_y && m_z < self.m_z,
            "antenna index ({m_y}, {m_z}) out of range for a {}x{} array",
            self.m_y,
            self.m_z
        );
        Point3::new(
            self.origin.x,
            self.origin.y + m_y as f64 * self.spacing,
            self.origin.z + self.height + m_z as f64 * self.spacing,
        )
    }

    /// Position of the element with linear index `index`.
    ///
    /// Elements are ordered y-major (`index = m_y * M_z + m_z`), so a
    /// contiguous index range covers whole or partial columns along y.
    pub fn element_position(&self, index: usize) -> Point3 {
        self.antenna_position(index / self.m_z, index % self.m_z)
    }

    /// Distance from `p` to the closest array element.
    pub fn nearest_element_distance(&self, p: &Point3) -> f64 {
        let nearest = |coord: f64, count: usize| -> usize {
            let idx = (coord / self.spacing).round();
            idx.clamp(0.0, (count - 1) as f64) as usize
        };
        let iy = nearest(p.y - self.origin.y, self.m_y);
        let iz = nearest(p.z - self.origin.z - self.height, self.m_z);
        self.antenna_position(iy, iz).distance(p)
    }
}

/// Contiguous split of the array elements into `count` equal subarrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubarrayPartition {
    count: usize,
    size: usize,
}

impl SubarrayPartition {
    /// Splits `antennas` elements into `count` SAs.
    ///
    /// `count` must divide `antennas`, and each SA must hold at least
    /// [`MIN_SUBARRAY_ANTENNAS`] elements unless `allow_small` is set.
    pub fn new(antennas: usize, count: usize, allow_small: bool) -> Result<Self> {
        if count == 0 || antennas % count != 0 {
            return Err(ConfigError::SubarrayDivisibility { m: antennas, b: count });
        }
        let size = antennas / count;
        if size < MIN_SUBARRAY_ANTENNAS && !allow_small {
            return Err(ConfigError::SubarrayTooSmall { m_b: size, min: MIN_SUBARRAY_ANTENNAS });
        }
        Ok(Self { count, size })
    }

    /// Number of subarrays `B`.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Elements per subarray `M_b`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn subarray_of(&self, antenna: usize) -> usize {
        assert!(antenna < self.count * self.size, "antenna {antenna} out of range");
        antenna / self.size
    }

    pub fn elements(&self, subarray: usize) -> std::ops::Range<usize> {
        assert!(subarray < self.count, "subarray {subarray} out of range");
        subarray * self.size..(subarray + 1) * self.size
    }
}

/// Rectangular cell in front of the array.
///
/// The footprint spans `depth` meters along +x (away from the array plane)
/// and `width` meters along y, centered on the middle of the array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellLayout {
    pub width: f64,
    pub depth: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub user_height: (f64, f64),
}

impl Default for CellLayout {
    fn default() -> Self {
        Self {
            width: 200.0,
            depth: 100.0,
            d_min: 10.0,
            d_max: 180.0,
            user_height: (1.0, 1.7),
        }
    }
}

impl CellLayout {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.depth > 0.0) {
            return Err(ConfigError::Cell(format!(
                "footprint must be positive (got {} x {})",
                self.width, self.depth
            )));
        }
        if !(self.d_min > 0.0 && self.d_min < self.d_max) {
            return Err(ConfigError::Cell(format!(
                "need 0 < d_min < d_max (got {}, {})",
                self.d_min, self.d_max
            )));
        }
        let (lo, hi) = self.user_height;
        if !(lo >= 0.0 && lo <= hi) {
            return Err(ConfigError::Cell(format!("bad user height range [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Footprint bounds `(x_range, y_range)` for an array of the given geometry.
    pub fn footprint(&self, geom: &UraGeometry) -> ((f64, f64), (f64, f64)) {
        let y_mid = geom.origin.y + 0.5 * (geom.m_y.saturating_sub(1)) as f64 * geom.spacing;
        let x0 = geom.origin.x;
        (
            (x0, x0 + self.depth),
            (y_mid - 0.5 * self.width, y_mid + 0.5 * self.width),
        )
    }

    pub fn admits(&self, geom: &UraGeometry, p: &Point3) -> bool {
        let r = geom.nearest_element_distance(p);
        self.d_min <= r && r <= self.d_max
    }
}

/// Drops `k` users uniformly over the cell, rejecting positions whose
/// nearest-element distance falls outside `[d_min, d_max]`.
pub fn place_users<R: Rng + ?Sized>(
    cell: &CellLayout,
    geom: &UraGeometry,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Point3>> {
    let ((x0, x1), (y0, y1)) = cell.footprint(geom);
    let (h0, h1) = cell.user_height;
    let mut users = Vec::with_capacity(k);
    for _ in 0..k {
        let mut placed = None;
        for _ in 0..PLACEMENT_BUDGET {
            let p = Point3::new(
                x0 + (x1 - x0) * rng.random::<f64>(),
                y0 + (y1 - y0) * rng.random::<f64>(),
                h0 + (h1 - h0) * rng.random::<f64>(),
            );
            if cell.admits(geom, &p) {
                placed = Some(p);
                break;
            }
        }
        match placed {
            Some(p) => users.push(p),
            None => {
                return Err(ConfigError::Unsatisfiable {
                    d_min: cell.d_min,
                    d_max: cell.d_max,
                    budget: PLACEMENT_BUDGET,
                })
            }
        }
    }
    Ok(users)
}

/// Path-loss gain with shadowing, in linear scale:
/// `10^(-kappa * log10(r) + (g_db + shadow_db) / 10)`.
pub fn large_scale_fading(r: f64, shadow_db: f64, kappa: f64, g_db: f64) -> f64 {
    assert!(r > 0.0, "distance must be positive (got {r})");
    10f64.powf(-kappa * r.log10() + (g_db + shadow_db) / 10.0)
}

/// Average of per-element gains over one subarray.
pub fn subarray_fading(per_antenna: &[f64]) -> f64 {
    assert!(!per_antenna.is_empty(), "subarray has no elements");
    per_antenna.iter().sum::<f64>() / per_antenna.len() as f64
}

/// How shadowing samples are shared across elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShadowingMode {
    /// Independent draw per (user, element).
    #[default]
    PerAntenna,
    /// One draw per (user, subarray), shared by its elements.
    PerSubarray,
}

/// Urban-micro large-scale fading parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub kappa: f64,
    pub g_db: f64,
    pub sigma_sf_db: f64,
    pub shadowing: ShadowingMode,
    /// Transmit power per user, watts.
    pub rho: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            kappa: 3.8,
            g_db: -34.53,
            sigma_sf_db: 10.0,
            shadowing: ShadowingMode::PerAntenna,
            rho: 1.0,
        }
    }
}

/// Per-user, per-subarray average large-scale gains and transmit powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadingMap {
    subarrays: usize,
    beta: Vec<f64>,
    rho: Vec<f64>,
}

impl FadingMap {
    /// Builds a map from row-major `K x B` gains.
    pub fn from_rows(rows: Vec<Vec<f64>>, rho: Vec<f64>) -> Self {
        assert_eq!(rows.len(), rho.len(), "one power per user");
        let subarrays = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == subarrays), "ragged gain table");
        Self { subarrays, beta: rows.into_iter().flatten().collect(), rho }
    }

    pub fn users(&self) -> usize {
        self.rho.len()
    }

    pub fn subarrays(&self) -> usize {
        self.subarrays
    }

    pub fn beta(&self, k: usize, b: usize) -> f64 {
        self.beta[k * self.subarrays + b]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.beta[k * self.subarrays..(k + 1) * self.subarrays]
    }

    pub fn rho(&self, k: usize) -> f64 {
        self.rho[k]
    }

    /// Received power `rho_k * beta_k^(b)`.
    pub fn received(&self, k: usize, b: usize) -> f64 {
        self.rho[k] * self.beta(k, b)
    }
}

/// Which subarrays each user can see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityMap {
    subarrays: usize,
    p_b: f64,
    visible: Vec<bool>,
}

impl VisibilityMap {
    pub fn from_rows(rows: Vec<Vec<bool>>, p_b: f64) -> Self {
        let subarrays = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == subarrays), "ragged visibility table");
        Self { subarrays, p_b, visible: rows.into_iter().flatten().collect() }
    }

    pub fn users(&self) -> usize {
        if self.subarrays == 0 {
            0
        } else {
            self.visible.len() / self.subarrays
        }
    }

    pub fn subarrays(&self) -> usize {
        self.subarrays
    }

    pub fn probability(&self) -> f64 {
        self.p_b
    }

    pub fn is_visible(&self, k: usize, b: usize) -> bool {
        self.visible[k * self.subarrays + b]
    }

    pub fn row(&self, k: usize) -> &[bool] {
        &self.visible[k * self.subarrays..(k + 1) * self.subarrays]
    }

    /// Indices of the SAs visible to user `k`.
    pub fn visible_set(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(k).iter().enumerate().filter(|(_, v)| **v).map(|(b, _)| b)
    }

    pub fn visible_count(&self, k: usize) -> usize {
        self.row(k).iter().filter(|v| **v).count()
    }
}

/// Independent Bernoulli(`p_b`) visibility for every (user, SA) pair.
pub fn draw_visibility<R: Rng + ?Sized>(k: usize, b: usize, p_b: f64, rng: &mut R) -> VisibilityMap {
    assert!((0.0..=1.0).contains(&p_b), "P_b must be a probability (got {p_b})");
    let visible = (0..k * b).map(|_| rng.random::<f64>() < p_b).collect();
    VisibilityMap { subarrays: b, p_b, visible }
}

/// Sum of visible per-SA gains, `sum_{b in V_k} beta_k^(b)`.
pub fn visible_gain_sum(k: usize, fading: &FadingMap, vis: &VisibilityMap) -> f64 {
    vis.visible_set(k).map(|b| fading.beta(k, b)).sum()
}

/// `rho_k * tau * sum_{b in V_k} beta_k^(b)`; zero when nothing is visible.
pub fn effective_uplink_gain(k: usize, fading: &FadingMap, vis: &VisibilityMap, tau: usize) -> f64 {
    fading.rho(k) * tau as f64 * visible_gain_sum(k, fading, vis)
}

/// Everything needed to generate a [`Scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub geometry: UraGeometry,
    pub cell: CellLayout,
    pub channel: ChannelParams,
    pub users: usize,
    pub subarrays: usize,
    pub p_b: f64,
    pub allow_small_subarrays: bool,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<SubarrayPartition> {
        self.geometry.validate()?;
        self.cell.validate()?;
        check_probability("P_b", self.p_b)?;
        if !(self.channel.rho > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "transmit power must be positive (got {})",
                self.channel.rho
            )));
        }
        if !(self.channel.sigma_sf_db >= 0.0) {
            return Err(ConfigError::Invalid("shadowing std must be non-negative".into()));
        }
        SubarrayPartition::new(self.geometry.antennas(), self.subarrays, self.allow_small_subarrays)
    }
}

/// One trial's physical world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub partition: SubarrayPartition,
    pub positions: Vec<Point3>,
    pub fading: FadingMap,
    pub visibility: VisibilityMap,
}

impl Scenario {
    /// Draws positions, then gains, then visibility from `rng`.
    pub fn generate<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Self> {
        let partition = cfg.validate()?;
        let positions = place_users(&cfg.cell, &cfg.geometry, cfg.users, rng)?;
        let fading = draw_fading(cfg, &partition, &positions, rng);
        let visibility = draw_visibility(cfg.users, partition.count(), cfg.p_b, rng);
        Ok(Self { partition, positions, fading, visibility })
    }

    pub fn users(&self) -> usize {
        self.positions.len()
    }
}

fn draw_fading<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    partition: &SubarrayPartition,
    positions: &[Point3],
    rng: &mut R,
) -> FadingMap {
    let ch = &cfg.channel;
    // 10^(-kappa*log10(r) + (g + phi)/10), evaluated as one exp of a log-sum.
    let ln10 = std::f64::consts::LN_10;
    let base = ch.g_db / 10.0 * ln10;
    let half_kappa = 0.5 * ch.kappa;
    let shadow_scale = ch.sigma_sf_db / 10.0 * ln10;
    let elements: Vec<Point3> =
        (0..cfg.geometry.antennas()).map(|m| cfg.geometry.element_position(m)).collect();
    let mut per_antenna = vec![0.0; partition.size()];
    let mut beta = Vec::with_capacity(positions.len() * partition.count());
    for q in positions {
        for b in 0..partition.count() {
            let shared: f64 = match ch.shadowing {
                ShadowingMode::PerSubarray => rng.sample::<f64, _>(StandardNormal),
                ShadowingMode::PerAntenna => 0.0,
            };
            for (slot, m) in per_antenna.iter_mut().zip(partition.elements(b)) {
                let z = match ch.shadowing {
                    ShadowingMode::PerAntenna => StandardNormal.sample(rng),
                    ShadowingMode::PerSubarray => shared,
                };
                let r2 = elements[m].distance_squared(q);
                *slot = (base - half_kappa * r2.ln() + shadow_scale * z).exp();
            }
            beta.push(subarray_fading(&per_antenna));
        }
    }
    FadingMap { subarrays: partition.count(), beta, rho: vec![ch.rho; positions.len()] }
}
