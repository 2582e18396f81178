//! Layered cell geometry: anode | separator | cathode along x, with an
//! optional uniform transverse direction for 2D tensor grids.
//!
//! Cells are cell-centered finite volumes. Interior faces carry the two
//! center-to-face distances so that face coefficients can be formed by
//! harmonic averaging.

use crate::error::GeometryError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Anode,
    Separator,
    Cathode,
}

impl Region {
    pub fn is_electrode(self) -> bool {
        !matches!(self, Region::Separator)
    }

    pub fn tag(self) -> char {
        match self {
            Region::Anode => 'a',
            Region::Separator => 's',
            Region::Cathode => 'c',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Anode => "anode",
            Region::Separator => "separator",
            Region::Cathode => "cathode",
        }
    }
}

/// A subset of the three regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionSet {
    pub anode: bool,
    pub separator: bool,
    pub cathode: bool,
}

impl RegionSet {
    pub const ALL: RegionSet = RegionSet {
        anode: true,
        separator: true,
        cathode: true,
    };
    /// Ω′ = anode ∪ cathode.
    pub const ELECTRODES: RegionSet = RegionSet {
        anode: true,
        separator: false,
        cathode: true,
    };
    pub const ANODE: RegionSet = RegionSet {
        anode: true,
        separator: false,
        cathode: false,
    };
    pub const SEPARATOR: RegionSet = RegionSet {
        anode: false,
        separator: true,
        cathode: false,
    };
    pub const CATHODE: RegionSet = RegionSet {
        anode: false,
        separator: false,
        cathode: true,
    };

    pub fn contains(&self, r: Region) -> bool {
        match r {
            Region::Anode => self.anode,
            Region::Separator => self.separator,
            Region::Cathode => self.cathode,
        }
    }
}

/// Layer lengths along x; `transverse` is the width in y for 2D meshes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainLayout {
    pub anode: f64,
    pub separator: f64,
    pub cathode: f64,
    pub transverse: Option<f64>,
}

impl DomainLayout {
    pub fn new(anode: f64, separator: f64, cathode: f64) -> Result<Self, GeometryError> {
        let layout = DomainLayout {
            anode,
            separator,
            cathode,
            transverse: None,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn with_transverse(mut self, width: f64) -> Result<Self, GeometryError> {
        if !(width > 0.0) {
            return Err(GeometryError::BadTransverse { width, cells: 1 });
        }
        self.transverse = Some(width);
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        for (layer, length) in [
            ("anode", self.anode),
            ("separator", self.separator),
            ("cathode", self.cathode),
        ] {
            if !(length > 0.0) || !length.is_finite() {
                return Err(GeometryError::NonPositiveLength { layer, length });
            }
        }
        if let Some(w) = self.transverse {
            if !(w > 0.0) {
                return Err(GeometryError::BadTransverse { width: w, cells: 1 });
            }
        }
        Ok(())
    }

    pub fn total_length(&self) -> f64 {
        self.anode + self.separator + self.cathode
    }

    pub fn width(&self) -> f64 {
        self.transverse.unwrap_or(1.0)
    }

    /// Measure of a region set (length × width).
    pub fn measure(&self, set: RegionSet) -> f64 {
        let mut l = 0.0;
        if set.anode {
            l += self.anode;
        }
        if set.separator {
            l += self.separator;
        }
        if set.cathode {
            l += self.cathode;
        }
        l * self.width()
    }

    /// x-coordinates of the anode/separator and separator/cathode interfaces.
    pub fn interfaces(&self) -> (f64, f64) {
        (self.anode, self.anode + self.separator)
    }
}

/// Separator strictly thinner than the two electrodes together: |Ω_s| < |Ω′|.
pub fn check_separator_condition(layout: &DomainLayout) -> bool {
    layout.separator < layout.anode + layout.cathode
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellCounts {
    pub anode: usize,
    pub separator: usize,
    pub cathode: usize,
    /// Cells across the transverse direction; 1 for a 1D mesh.
    pub transverse: usize,
}

impl CellCounts {
    pub fn new(anode: usize, separator: usize, cathode: usize) -> Self {
        CellCounts {
            anode,
            separator,
            cathode,
            transverse: 1,
        }
    }

    pub fn with_transverse(mut self, ny: usize) -> Self {
        self.transverse = ny;
        self
    }

    pub fn refined(&self, factor: usize) -> Self {
        CellCounts {
            anode: self.anode * factor,
            separator: self.separator * factor,
            cathode: self.cathode * factor,
            transverse: if self.transverse > 1 {
                self.transverse * factor
            } else {
                1
            },
        }
    }
}

/// Interior face between cells `cells.0` and `cells.1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub cells: (usize, usize),
    pub area: f64,
    /// Distances from each cell center to the face.
    pub dist: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundarySide {
    /// x = 0, the anode current collector Γ_a.
    West,
    /// x = L, the cathode current collector Γ_c.
    East,
    South,
    North,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    pub cell: usize,
    pub area: f64,
    pub side: BoundarySide,
}

/// Cell-centered tensor mesh, x-major ordering `index = ix * ny + iy`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    layout: DomainLayout,
    counts: CellCounts,
    nx: usize,
    ny: usize,
    centers: Vec<[f64; 2]>,
    volumes: Vec<f64>,
    regions: Vec<Region>,
    faces: Vec<Face>,
    boundary_faces: Vec<BoundaryFace>,
}

pub fn build_layered_mesh(
    layout: &DomainLayout,
    counts: CellCounts,
) -> Result<Mesh, GeometryError> {
    layout.validate()?;
    for (layer, cells) in [
        ("anode", counts.anode),
        ("separator", counts.separator),
        ("cathode", counts.cathode),
    ] {
        if cells < 2 {
            return Err(GeometryError::TooFewCells { layer, cells });
        }
    }
    if counts.transverse == 0 {
        return Err(GeometryError::BadTransverse {
            width: layout.width(),
            cells: 0,
        });
    }

    // x-edges per layer; the last edge of each layer is set exactly to the interface.
    let (x1, x2) = layout.interfaces();
    let xend = layout.total_length();
    let mut x_cells: Vec<(f64, f64, Region)> = Vec::new();
    for (start, end, n, region) in [
        (0.0, x1, counts.anode, Region::Anode),
        (x1, x2, counts.separator, Region::Separator),
        (x2, xend, counts.cathode, Region::Cathode),
    ] {
        let dx = (end - start) / n as f64;
        for i in 0..n {
            let lo = start + dx * i as f64;
            let hi = if i + 1 == n {
                end
            } else {
                start + dx * (i + 1) as f64
            };
            x_cells.push((lo, hi, region));
        }
    }

    let nx = x_cells.len();
    let ny = counts.transverse;
    let width = layout.width();
    let dy = width / ny as f64;

    let mut centers = Vec::with_capacity(nx * ny);
    let mut volumes = Vec::with_capacity(nx * ny);
    let mut regions = Vec::with_capacity(nx * ny);
    for &(lo, hi, region) in &x_cells {
        for iy in 0..ny {
            centers.push([0.5 * (lo + hi), dy * (iy as f64 + 0.5)]);
            volumes.push((hi - lo) * dy);
            regions.push(region);
        }
    }

    let idx = |ix: usize, iy: usize| ix * ny + iy;
    let mut faces = Vec::new();
    for ix in 0..nx {
        let (lo, hi, _) = x_cells[ix];
        let hx = hi - lo;
        for iy in 0..ny {
            if ix + 1 < nx {
                let (lo2, hi2, _) = x_cells[ix + 1];
                faces.push(Face {
                    cells: (idx(ix, iy), idx(ix + 1, iy)),
                    area: dy,
                    dist: (0.5 * hx, 0.5 * (hi2 - lo2)),
                });
            }
            if iy + 1 < ny {
                faces.push(Face {
                    cells: (idx(ix, iy), idx(ix, iy + 1)),
                    area: hx,
                    dist: (0.5 * dy, 0.5 * dy),
                });
            }
        }
    }

    let mut boundary_faces = Vec::new();
    for iy in 0..ny {
        boundary_faces.push(BoundaryFace {
            cell: idx(0, iy),
            area: dy,
            side: BoundarySide::West,
        });
        boundary_faces.push(BoundaryFace {
            cell: idx(nx - 1, iy),
            area: dy,
            side: BoundarySide::East,
        });
    }
    if ny > 1 {
        for (ix, &(lo, hi, _)) in x_cells.iter().enumerate() {
            boundary_faces.push(BoundaryFace {
                cell: idx(ix, 0),
                area: hi - lo,
                side: BoundarySide::South,
            });
            boundary_faces.push(BoundaryFace {
                cell: idx(ix, ny - 1),
                area: hi - lo,
                side: BoundarySide::North,
            });
        }
    }

    Ok(Mesh {
        layout: *layout,
        counts,
        nx,
        ny,
        centers,
        volumes,
        regions,
        faces,
        boundary_faces,
    })
}

impl Mesh {
    pub fn layout(&self) -> &DomainLayout {
        &self.layout
    }

    pub fn counts(&self) -> CellCounts {
        self.counts
    }

    pub fn n_cells(&self) -> usize {
        self.volumes.len()
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn is_1d(&self) -> bool {
        self.ny == 1
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, cell: usize) -> Region {
        self.regions[cell]
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn boundary_faces(&self) -> &[BoundaryFace] {
        &self.boundary_faces
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }

    pub fn region_measure(&self, set: RegionSet) -> f64 {
        self.volumes
            .iter()
            .zip(&self.regions)
            .filter(|(_, r)| set.contains(**r))
            .map(|(v, _)| v)
            .sum()
    }

    pub fn cells_in(&self, set: RegionSet) -> impl Iterator<Item = usize> + '_ {
        self.regions
            .iter()
            .enumerate()
            .filter(move |(_, r)| set.contains(**r))
            .map(|(i, _)| i)
    }

    /// Faces of Ω′ on the external boundary Γ_a ∪ Γ_c, in boundary-face order.
    pub fn external_faces(&self) -> impl Iterator<Item = &BoundaryFace> + '_ {
        self.boundary_faces
            .iter()
            .filter(|f| matches!(f.side, BoundarySide::West | BoundarySide::East))
    }

    /// Interior faces separating an electrode cell from a separator cell.
    /// Returned as (face, electrode cell).
    pub fn electrode_interface_faces(&self) -> impl Iterator<Item = (&Face, usize)> + '_ {
        self.faces.iter().filter_map(move |f| {
            let (a, b) = f.cells;
            match (
                self.regions[a].is_electrode(),
                self.regions[b].is_electrode(),
            ) {
                (true, false) => Some((f, a)),
                (false, true) => Some((f, b)),
                _ => None,
            }
        })
    }
}

/// Σ volume × value over the cells in `set`; exact for cellwise-constant fields.
pub fn region_integral(mesh: &Mesh, field: &[f64], set: RegionSet) -> Result<f64, GeometryError> {
    if field.len() != mesh.n_cells() {
        return Err(GeometryError::LengthMismatch {
            expected: mesh.n_cells(),
            got: field.len(),
        });
    }
    Ok(mesh
        .volumes
        .iter()
        .zip(&mesh.regions)
        .zip(field)
        .filter(|((_, r), _)| set.contains(**r))
        .map(|((v, _), f)| v * f)
        .sum())
}
