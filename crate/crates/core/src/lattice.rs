//! Geometry of `Z^d`: bounded boxes with dense site indexing, discrete
//! blow-ups of continuum shapes, boundaries, and vacant-set connectivity.
//!
//! Conventions: `boundary(S)` is the outer boundary (sites off `S` adjacent
//! to it), `inner_boundary(S)` the sites of `S` adjacent to its complement,
//! and a path connects `A` to `B` through `U` only if *every* vertex of the
//! path, endpoints included, lies in `U`.

use crate::error::{Error, Result};
use std::collections::VecDeque;
use std::io::{BufRead, Write};

/// A bounding box of `Z^d` with a dense row-major site indexing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeModel {
    d: usize,
    lo: Vec<i64>,
    hi: Vec<i64>, // inclusive
    dims: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl LatticeModel {
    pub fn new(d: usize, lo: Vec<i64>, hi: Vec<i64>) -> Result<LatticeModel> {
        if d < 3 {
            return Err(Error::DimensionTooSmall(d));
        }
        if lo.len() != d || hi.len() != d || lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return Err(Error::BadParameter("bad bounding box".into()));
        }
        let dims: Vec<usize> = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| (b - a + 1) as usize)
            .collect();
        let mut strides = vec![0usize; d];
        let mut acc = 1usize;
        for axis in (0..d).rev() {
            strides[axis] = acc;
            acc = acc
                .checked_mul(dims[axis])
                .ok_or_else(|| Error::BadParameter("box too large".into()))?;
        }
        Ok(LatticeModel {
            d,
            lo,
            hi,
            dims,
            strides,
            len: acc,
        })
    }

    /// Box centered at the origin with half-width `radius` on every axis.
    pub fn centered(d: usize, radius: i64) -> Result<LatticeModel> {
        LatticeModel::new(d, vec![-radius; d], vec![radius; d])
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn lo(&self) -> &[i64] {
        &self.lo
    }

    pub fn hi(&self) -> &[i64] {
        &self.hi
    }

    /// Half-width of the box: the largest `|coordinate|` it can hold.
    pub fn radius(&self) -> i64 {
        self.lo
            .iter()
            .chain(self.hi.iter())
            .map(|v| v.abs())
            .max()
            .unwrap()
    }

    #[inline]
    pub fn contains(&self, site: &[i64]) -> bool {
        site.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (a, b))| a <= x && x <= b)
    }

    #[inline]
    pub fn id(&self, site: &[i64]) -> Option<usize> {
        if !self.contains(site) {
            return None;
        }
        let mut id = 0usize;
        for axis in 0..self.d {
            id += ((site[axis] - self.lo[axis]) as usize) * self.strides[axis];
        }
        Some(id)
    }

    pub fn coords(&self, id: usize) -> Vec<i64> {
        let mut out = vec![0i64; self.d];
        self.write_coords(id, &mut out);
        out
    }

    #[inline]
    pub fn write_coords(&self, id: usize, out: &mut [i64]) {
        let mut rem = id;
        for axis in 0..self.d {
            out[axis] = self.lo[axis] + (rem / self.strides[axis]) as i64;
            rem %= self.strides[axis];
        }
    }

    /// Neighbour in direction `dir` (axis = dir/2, sign = dir%2), staying in
    /// the box.
    #[inline]
    pub fn neighbor(&self, id: usize, dir: usize) -> Option<usize> {
        let axis = dir / 2;
        let pos = (id / self.strides[axis]) % self.dims[axis];
        if dir % 2 == 0 {
            if pos + 1 >= self.dims[axis] {
                return None;
            }
            Some(id + self.strides[axis])
        } else {
            if pos == 0 {
                return None;
            }
            Some(id - self.strides[axis])
        }
    }

    pub fn num_dirs(&self) -> usize {
        2 * self.d
    }

    /// Grow the box by `margin` on every side.
    pub fn grown(&self, margin: i64) -> LatticeModel {
        LatticeModel::new(
            self.d,
            self.lo.iter().map(|v| v - margin).collect(),
            self.hi.iter().map(|v| v + margin).collect(),
        )
        .expect("growing a valid box stays valid")
    }
}

/// A finite set of lattice sites: sorted dense ids over a bounding box.
#[derive(Debug, Clone)]
pub struct SiteSet {
    model: LatticeModel,
    ids: Vec<usize>,
}

impl SiteSet {
    pub fn from_ids(model: LatticeModel, mut ids: Vec<usize>) -> SiteSet {
        ids.sort_unstable();
        ids.dedup();
        SiteSet { model, ids }
    }

    pub fn from_sites(d: usize, sites: &[Vec<i64>]) -> Result<SiteSet> {
        if sites.is_empty() {
            return Err(Error::EmptyTarget);
        }
        let mut lo = sites[0].clone();
        let mut hi = sites[0].clone();
        for s in sites {
            for axis in 0..d {
                lo[axis] = lo[axis].min(s[axis]);
                hi[axis] = hi[axis].max(s[axis]);
            }
        }
        let model = LatticeModel::new(d, lo, hi)?;
        let ids = sites.iter().map(|s| model.id(s).unwrap()).collect();
        Ok(SiteSet::from_ids(model, ids))
    }

    pub fn model(&self) -> &LatticeModel {
        &self.model
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains_id(&self, id: usize) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    pub fn contains_site(&self, site: &[i64]) -> bool {
        self.model.id(site).is_some_and(|id| self.contains_id(id))
    }

    pub fn sites(&self) -> Vec<Vec<i64>> {
        self.ids.iter().map(|&id| self.model.coords(id)).collect()
    }

    /// Largest sup-norm of any member.
    pub fn inf_radius(&self) -> i64 {
        let mut buf = vec![0i64; self.model.d];
        let mut r = 0i64;
        for &id in &self.ids {
            self.model.write_coords(id, &mut buf);
            r = r.max(buf.iter().map(|v| v.abs()).max().unwrap());
        }
        r
    }

    /// Membership mask over an arbitrary box.
    pub fn mask_on(&self, model: &LatticeModel) -> Vec<bool> {
        let mut mask = vec![false; model.len()];
        let mut buf = vec![0i64; model.d()];
        for &id in &self.ids {
            self.model.write_coords(id, &mut buf);
            if let Some(j) = model.id(&buf) {
                mask[j] = true;
            }
        }
        mask
    }

    /// Outer boundary: sites adjacent to the set but not in it. The result
    /// lives on a box grown by one.
    pub fn boundary(&self) -> SiteSet {
        let grown = self.model.grown(1);
        let mask = self.mask_on(&grown);
        let mut out = Vec::new();
        for &id in &self.ids {
            let gid = grow_id(&self.model, &grown, id);
            for dir in 0..grown.num_dirs() {
                if let Some(nb) = grown.neighbor(gid, dir) {
                    if !mask[nb] {
                        out.push(nb);
                    }
                }
            }
        }
        SiteSet::from_ids(grown, out)
    }

    /// Inner boundary: members adjacent to the complement.
    pub fn inner_boundary(&self) -> SiteSet {
        let grown = self.model.grown(1);
        let mask = self.mask_on(&grown);
        let mut out = Vec::new();
        for &id in &self.ids {
            let gid = grow_id(&self.model, &grown, id);
            let exposed = (0..grown.num_dirs()).any(|dir| {
                grown
                    .neighbor(gid, dir)
                    .map(|nb| !mask[nb])
                    .unwrap_or(true)
            });
            if exposed {
                out.push(id);
            }
        }
        SiteSet::from_ids(self.model.clone(), out)
    }

    /// The set together with its outer boundary.
    pub fn closure(&self) -> SiteSet {
        let grown = self.model.grown(1);
        let mut ids: Vec<usize> = self
            .ids
            .iter()
            .map(|&id| grow_id(&self.model, &grown, id))
            .collect();
        let boundary = self.boundary();
        ids.extend_from_slice(boundary.ids());
        SiteSet::from_ids(grown, ids)
    }

    pub fn union(&self, other: &SiteSet) -> SiteSet {
        let mut sites = self.sites();
        sites.extend(other.sites());
        SiteSet::from_sites(self.model.d(), &sites).expect("union of non-empty sets")
    }

    pub fn intersect(&self, other: &SiteSet) -> SiteSet {
        let ids = self
            .ids
            .iter()
            .filter(|&&id| {
                let c = self.model.coords(id);
                other.contains_site(&c)
            })
            .copied()
            .collect();
        SiteSet {
            model: self.model.clone(),
            ids,
        }
    }

    pub fn is_subset_of(&self, other: &SiteSet) -> bool {
        self.ids.iter().all(|&id| {
            let c = self.model.coords(id);
            other.contains_site(&c)
        })
    }

    /// Line-based text format: header `d N count`, then one site per line.
    /// `N` is the bounding half-width. Round-trips exactly.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {} {}", self.model.d, self.model.radius(), self.len())?;
        let mut buf = vec![0i64; self.model.d];
        for &id in &self.ids {
            self.model.write_coords(id, &mut buf);
            let line: Vec<String> = buf.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<SiteSet> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("missing header".into()))??;
        let head: Vec<i64> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Format("bad header".into())))
            .collect::<Result<_>>()?;
        if head.len() != 3 {
            return Err(Error::Format("header must be `d N count`".into()));
        }
        let (d, radius, count) = (head[0] as usize, head[1], head[2] as usize);
        let model = LatticeModel::centered(d, radius)?;
        let mut ids = Vec::with_capacity(count);
        for line in lines.take(count) {
            let line = line?;
            let site: Vec<i64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Format("bad site".into())))
                .collect::<Result<_>>()?;
            if site.len() != d {
                return Err(Error::Format("site has wrong dimension".into()));
            }
            ids.push(
                model
                    .id(&site)
                    .ok_or_else(|| Error::Format("site outside declared box".into()))?,
            );
        }
        if ids.len() != count {
            return Err(Error::Format("truncated site list".into()));
        }
        Ok(SiteSet::from_ids(model, ids))
    }
}

fn grow_id(small: &LatticeModel, grown: &LatticeModel, id: usize) -> usize {
    let c = small.coords(id);
    grown.id(&c).expect("grown box contains the original")
}

/// A compact subset of `R^d`: Euclidean balls, axis boxes, or finite unions.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub enum CompactShape {
    /// Euclidean ball; radius zero denotes a single point.
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Union(Vec<CompactShape>),
}

impl CompactShape {
    pub fn point(d: usize) -> CompactShape {
        CompactShape::Ball {
            center: vec![0.0; d],
            radius: 0.0,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            CompactShape::Ball { center, radius } => {
                if center.len() != d || *radius < 0.0 {
                    return Err(Error::BadParameter("bad ball".into()));
                }
            }
            CompactShape::Box { lo, hi } => {
                if lo.len() != d || hi.len() != d || lo.iter().zip(hi).any(|(a, b)| a >= b) {
                    return Err(Error::BadParameter("bad box (widths must be > 0)".into()));
                }
            }
            CompactShape::Union(members) => {
                if members.is_empty() {
                    return Err(Error::EmptyShape);
                }
                for m in members {
                    m.validate(d)?;
                }
            }
        }
        Ok(())
    }

    pub fn contains_origin(&self) -> bool {
        match self {
            CompactShape::Ball { center, radius } => {
                center.iter().map(|c| c * c).sum::<f64>().sqrt() <= *radius
            }
            CompactShape::Box { lo, hi } => lo.iter().zip(hi).all(|(a, b)| *a <= 0.0 && 0.0 <= *b),
            CompactShape::Union(members) => members.iter().any(|m| m.contains_origin()),
        }
    }

    /// Euclidean distance from `z` to the shape.
    pub fn euclid_dist(&self, z: &[f64]) -> f64 {
        match self {
            CompactShape::Ball { center, radius } => {
                let d2: f64 = z
                    .iter()
                    .zip(center)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                (d2 - radius).max(0.0)
            }
            CompactShape::Box { lo, hi } => z
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(x, (a, b))| {
                    let g = (a - x).max(0.0).max(x - b);
                    g * g
                })
                .sum::<f64>()
                .sqrt(),
            CompactShape::Union(members) => members
                .iter()
                .map(|m| m.euclid_dist(z))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Euclidean distance from the sup-norm cube `{y : |y - x|_inf <= slack}`
    /// to the scaled shape `N * K`. Closed form via coordinate clamping.
    fn euclid_dist_from_cube(&self, x: &[i64], slack: f64, scale: f64) -> f64 {
        match self {
            CompactShape::Ball { center, radius } => {
                let g2: f64 = x
                    .iter()
                    .zip(center)
                    .map(|(xi, ci)| {
                        let g = ((*xi as f64) - scale * ci).abs() - slack;
                        let g = g.max(0.0);
                        g * g
                    })
                    .sum();
                (g2.sqrt() - scale * radius).max(0.0)
            }
            CompactShape::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(xi, (a, b))| {
                    let xi = *xi as f64;
                    let g = (scale * a - xi - slack).max(0.0).max(xi - slack - scale * b);
                    g * g
                })
                .sum::<f64>()
                .sqrt(),
            CompactShape::Union(members) => members
                .iter()
                .map(|m| m.euclid_dist_from_cube(x, slack, scale))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Loose bound on the sup-norm extent of `N * K^dilation`, used to size
    /// enumeration windows.
    pub fn scaled_inf_extent(&self, scale: f64, dilation: f64) -> f64 {
        match self {
            CompactShape::Ball { center, radius } => {
                let c = center.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                scale * (c + radius + dilation)
            }
            CompactShape::Box { lo, hi } => {
                let c = lo
                    .iter()
                    .chain(hi.iter())
                    .fold(0.0f64, |m, v| m.max(v.abs()));
                scale * (c + dilation)
            }
            CompactShape::Union(members) => members
                .iter()
                .map(|m| m.scaled_inf_extent(scale, dilation))
                .fold(0.0, f64::max),
        }
    }
}

/// Discrete blow-up of the Euclidean `dilation`-neighbourhood of `K`:
/// all lattice sites within sup-norm distance 1 of `N * K^dilation`.
pub fn blow_up_dilated(k: &CompactShape, dilation: f64, n: u32) -> Result<SiteSet> {
    let d = match k {
        CompactShape::Ball { center, .. } => center.len(),
        CompactShape::Box { lo, .. } => lo.len(),
        CompactShape::Union(m) => match m.first() {
            Some(CompactShape::Ball { center, .. }) => center.len(),
            Some(CompactShape::Box { lo, .. }) => lo.len(),
            _ => return Err(Error::EmptyShape),
        },
    };
    k.validate(d)?;
    if n < 1 {
        return Err(Error::BadParameter("N must be at least 1".into()));
    }
    let scale = n as f64;
    let reach = k.scaled_inf_extent(scale, dilation) + 2.0;
    let radius = reach.ceil() as i64;
    let model = LatticeModel::centered(d, radius)?;
    let mut ids = Vec::new();
    let mut buf = vec![0i64; d];
    for id in 0..model.len() {
        model.write_coords(id, &mut buf);
        if k.euclid_dist_from_cube(&buf, 1.0, scale) <= scale * dilation {
            ids.push(id);
        }
    }
    if ids.is_empty() {
        return Err(Error::EmptyShape);
    }
    Ok(SiteSet::from_ids(model, ids))
}

/// Discrete blow-up `{x : d_inf(x, N*K) <= 1}` of the shape itself.
pub fn blow_up(k: &CompactShape, n: u32) -> Result<SiteSet> {
    blow_up_dilated(k, 0.0, n)
}

/// Is `A` connected to `B` by a nearest-neighbour path lying entirely
/// (endpoints included) in `U`? Breadth-first search from `A` inside `U`.
pub fn connectivity(u: &SiteSet, a: &SiteSet, b: &SiteSet) -> bool {
    let model = u.model().clone();
    let u_mask = u.mask_on(&model);
    let b_mask = b.mask_on(&model);
    let mut seen = vec![false; model.len()];
    let mut queue = VecDeque::new();
    let mut buf = vec![0i64; model.d()];
    for s in a.sites() {
        if let Some(id) = model.id(&s) {
            if u_mask[id] && !seen[id] {
                seen[id] = true;
                queue.push_back(id);
            }
        }
    }
    while let Some(id) = queue.pop_front() {
        if b_mask[id] {
            // the found site is in U by construction; the path stays in U
            model.write_coords(id, &mut buf);
            return true;
        }
        for dir in 0..model.num_dirs() {
            if let Some(nb) = model.neighbor(id, dir) {
                if u_mask[nb] && !seen[nb] {
                    seen[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
    }
    false
}

/// Finite-window surrogate for "`target` is not connected to infinity in the
/// vacant set": no vacant path joins `target` to the inner boundary of the
/// window box, with the path-endpoint convention of [`connectivity`].
pub fn disconnected_from_infinity(
    vacant: &SiteSet,
    target: &SiteSet,
    window_radius: i64,
) -> Result<bool> {
    let required = target.inf_radius() + 2;
    if window_radius < required {
        return Err(Error::WindowClipsTarget {
            window: window_radius,
            required,
        });
    }
    let model = LatticeModel::centered(target.model().d(), window_radius)?;
    let vac_mask = vacant.mask_on(&model);
    let tgt_mask = target.mask_on(&model);
    Ok(!window_connected(&model, &vac_mask, &tgt_mask, window_radius))
}

/// Mask-level connectivity of `target` to the window shell through `vacant`,
/// shared by the site-set API and the Monte Carlo drivers.
pub fn window_connected(
    model: &LatticeModel,
    vacant: &[bool],
    target: &[bool],
    window_radius: i64,
) -> bool {
    // best-first outward search: expands along corridors instead of flooding
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let mut seen = vec![false; model.len()];
    let mut heap: BinaryHeap<(i64, Reverse<usize>)> = BinaryHeap::new();
    let mut buf = vec![0i64; model.d()];
    for id in 0..model.len() {
        if target[id] && vacant[id] && !seen[id] {
            seen[id] = true;
            model.write_coords(id, &mut buf);
            let r = buf.iter().map(|v| v.abs()).max().unwrap();
            heap.push((r, Reverse(id)));
        }
    }
    while let Some((r, Reverse(id))) = heap.pop() {
        if r >= window_radius {
            return true;
        }
        for dir in 0..model.num_dirs() {
            if let Some(nb) = model.neighbor(id, dir) {
                if vacant[nb] && !seen[nb] {
                    seen[nb] = true;
                    model.write_coords(nb, &mut buf);
                    let rn = buf.iter().map(|v| v.abs()).max().unwrap();
                    heap.push((rn, Reverse(nb)));
                }
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_dimension() {
        assert!(LatticeModel::centered(2, 4).is_err());
    }

    #[test]
    fn every_site_has_2d_neighbors_inside() {
        let m = LatticeModel::centered(3, 3).unwrap();
        let id = m.id(&[0, 0, 0]).unwrap();
        let nbs: Vec<usize> = (0..m.num_dirs()).filter_map(|d| m.neighbor(id, d)).collect();
        assert_eq!(nbs.len(), 6);
        let mut coords: Vec<Vec<i64>> = nbs.iter().map(|&n| m.coords(n)).collect();
        coords.sort();
        coords.dedup();
        assert_eq!(coords.len(), 6);
        for c in coords {
            let dist: i64 = c.iter().map(|v| v.abs()).sum();
            assert_eq!(dist, 1);
        }
    }

    #[test]
    fn boundary_conventions() {
        let m = LatticeModel::centered(3, 2).unwrap();
        let ids = vec![m.id(&[0, 0, 0]).unwrap(), m.id(&[1, 0, 0]).unwrap()];
        let s = SiteSet::from_ids(m, ids);
        let b = s.boundary();
        let ib = s.inner_boundary();
        let cl = s.closure();
        assert_eq!(b.len(), 10);
        assert_eq!(ib.len(), 2);
        assert_eq!(cl.len(), 12);
        for site in b.sites() {
            assert!(!s.contains_site(&site));
        }
        for site in ib.sites() {
            assert!(s.contains_site(&site));
        }
    }

    #[test]
    fn blow_up_point_is_unit_ball() {
        let k = CompactShape::point(3);
        for n in [1u32, 2, 5] {
            let s = blow_up(&k, n).unwrap();
            assert_eq!(s.len(), 27, "N = {n}");
            assert!(s.contains_site(&[1, 1, 1]));
            assert!(!s.contains_site(&[2, 0, 0]));
        }
    }

    #[test]
    fn blow_up_box_example() {
        let k = CompactShape::Box {
            lo: vec![-1.0; 3],
            hi: vec![1.0; 3],
        };
        let s = blow_up(&k, 2).unwrap();
        assert_eq!(s.len(), 343); // B_inf(0, 3)
    }

    #[test]
    fn connectivity_trivial_cases() {
        let m = LatticeModel::centered(3, 4).unwrap();
        let x = m.id(&[0, 0, 0]).unwrap();
        let u = SiteSet::from_ids(m.clone(), vec![x]);
        let a = SiteSet::from_ids(m.clone(), vec![x]);
        assert!(connectivity(&u, &a, &a));
        // two sites at sup-distance 2 are not adjacent
        let y = m.id(&[2, 0, 0]).unwrap();
        let u2 = SiteSet::from_ids(m.clone(), vec![x, y]);
        let b = SiteSet::from_ids(m.clone(), vec![y]);
        assert!(!connectivity(&u2, &a, &b));
    }

    #[test]
    fn site_set_text_round_trip() {
        let m = LatticeModel::centered(3, 3).unwrap();
        let ids = vec![
            m.id(&[0, 0, 0]).unwrap(),
            m.id(&[-3, 2, 1]).unwrap(),
            m.id(&[1, 1, 1]).unwrap(),
        ];
        let s = SiteSet::from_ids(m, ids);
        let mut bytes = Vec::new();
        s.write_text(&mut bytes).unwrap();
        let back = SiteSet::read_text(&bytes[..]).unwrap();
        let mut bytes2 = Vec::new();
        back.write_text(&mut bytes2).unwrap();
        assert_eq!(bytes, bytes2);
        assert_eq!(s.sites(), back.sites());
    }
}
