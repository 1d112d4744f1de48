use super::{LinkId, RoadNetwork};
use crate::error::{Error, Result};

/// Uniform grid partition of the network bounding box; each link belongs to
/// the cell containing its centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMap {
    gw: usize,
    gh: usize,
    origin: (f64, f64),
    cell: (f64, f64),
    link_region: Vec<usize>,
    centroids: Vec<(f64, f64)>,
    degenerate: bool,
}

/// Cell index along one axis; points on an interior boundary go to the
/// lower-index cell.
fn axis_cell(v: f64, lo: f64, width: f64, n: usize) -> usize {
    if width <= 0.0 {
        return 0;
    }
    let f = (v - lo) / width;
    let k = f.ceil() as i64 - 1;
    k.clamp(0, n as i64 - 1) as usize
}

pub fn build_region_map(network: &RoadNetwork, gw: usize, gh: usize) -> Result<RegionMap> {
    if gw == 0 {
        return Err(Error::config("region_grid.width", "must be >= 1"));
    }
    if gh == 0 {
        return Err(Error::config("region_grid.height", "must be >= 1"));
    }
    if network.num_links() == 0 {
        return Err(Error::invalid("cannot partition a network without links"));
    }
    let (x0, y0, x1, y1) = network.bbox();
    let first = network.centroid(0);
    let degenerate = (0..network.num_links()).all(|l| network.centroid(l) == first);
    let (gw, gh) = if degenerate { (1, 1) } else { (gw, gh) };
    if degenerate {
        log::warn!("all link centroids coincide; using a single region");
    }
    let cell = ((x1 - x0) / gw as f64, (y1 - y0) / gh as f64);
    let link_region: Vec<usize> = (0..network.num_links())
        .map(|l| {
            let (x, y) = network.centroid(l);
            axis_cell(y, y0, cell.1, gh) * gw + axis_cell(x, x0, cell.0, gw)
        })
        .collect();
    let n = gw * gh;
    let mut sums = vec![(0.0, 0.0, 0usize); n];
    for (l, &r) in link_region.iter().enumerate() {
        let (x, y) = network.centroid(l);
        sums[r].0 += x;
        sums[r].1 += y;
        sums[r].2 += 1;
    }
    let centroids = sums
        .iter()
        .enumerate()
        .map(|(r, &(sx, sy, c))| {
            if c > 0 {
                (sx / c as f64, sy / c as f64)
            } else {
                // Empty cell: geometric center.
                let (ix, iy) = (r % gw, r / gw);
                (x0 + (ix as f64 + 0.5) * cell.0, y0 + (iy as f64 + 0.5) * cell.1)
            }
        })
        .collect();
    Ok(RegionMap {
        gw,
        gh,
        origin: (x0, y0),
        cell,
        link_region,
        centroids,
        degenerate,
    })
}

impl RegionMap {
    pub fn num_regions(&self) -> usize {
        self.gw * self.gh
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.gw, self.gh)
    }

    pub fn region_of(&self, link: LinkId) -> usize {
        self.link_region[link]
    }

    pub fn centroid(&self, region: usize) -> (f64, f64) {
        self.centroids[region]
    }

    /// True when every link centroid coincided and the map collapsed to one
    /// region.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn cell_size(&self) -> (f64, f64) {
        self.cell
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    /// Distance floor for same-region gravity: half the cell diagonal, and
    /// at least one meter.
    pub fn distance_floor(&self) -> f64 {
        (0.5 * self.cell.0.hypot(self.cell.1)).max(1.0)
    }

    /// Squared distance between region centroids, with the floor applied to
    /// same-region pairs.
    pub fn distance_sq(&self, a: usize, b: usize) -> f64 {
        let floor = self.distance_floor();
        if a == b {
            return floor * floor;
        }
        let (ax, ay) = self.centroids[a];
        let (bx, by) = self.centroids[b];
        let d2 = (ax - bx).powi(2) + (ay - by).powi(2);
        if d2 > 0.0 {
            d2
        } else {
            floor * floor
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadnet::{Link, Node};

    fn line_network(xs: &[f64]) -> RoadNetwork {
        // One short link per centroid plus two anchor nodes spanning x in [0, 10].
        let mut nodes = vec![Node { id: 0, x: 0.0, y: 0.0 }, Node { id: 1, x: 10.0, y: 0.0 }];
        let mut links = Vec::new();
        for (i, &x) in xs.iter().enumerate() {
            let a = nodes.len();
            nodes.push(Node { id: a, x: x - 0.5, y: 0.0 });
            nodes.push(Node { id: a + 1, x: x + 0.5, y: 0.0 });
            links.push(Link { id: i, from: a, to: a + 1, length: 1.0 });
        }
        RoadNetwork::new(nodes, links).unwrap()
    }

    #[test]
    fn single_cell_grid() {
        let net = line_network(&[1.0, 5.0, 9.0]);
        let m = build_region_map(&net, 1, 1).unwrap();
        assert!((0..3).all(|l| m.region_of(l) == 0));
    }

    #[test]
    fn halves_of_the_box() {
        let net = line_network(&[1.0, 9.0]);
        let m = build_region_map(&net, 2, 1).unwrap();
        assert_eq!(m.region_of(0), 0);
        assert_eq!(m.region_of(1), 1);
    }

    #[test]
    fn boundary_goes_to_lower_cell() {
        let net = line_network(&[5.0, 0.0, 10.0]);
        let m = build_region_map(&net, 2, 1).unwrap();
        assert_eq!(m.region_of(0), 0);
        assert_eq!(m.region_of(1), 0);
        assert_eq!(m.region_of(2), 1);
    }

    #[test]
    fn degenerate_collapses_to_one_region() {
        let nodes = vec![Node { id: 0, x: 3.0, y: 3.0 }, Node { id: 1, x: 3.0, y: 3.0 }];
        let links = vec![
            Link { id: 0, from: 0, to: 1, length: 1.0 },
            Link { id: 1, from: 1, to: 0, length: 1.0 },
        ];
        let net = RoadNetwork::new(nodes, links).unwrap();
        let m = build_region_map(&net, 4, 4).unwrap();
        assert!(m.is_degenerate());
        assert_eq!(m.num_regions(), 1);
        assert!(m.distance_sq(0, 0) > 0.0);
    }

    #[test]
    fn rejects_zero_dims() {
        let net = line_network(&[1.0]);
        assert!(build_region_map(&net, 0, 1).is_err());
        assert!(build_region_map(&net, 1, 0).is_err());
    }
}
