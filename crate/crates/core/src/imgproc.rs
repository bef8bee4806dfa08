//! Raster primitives shared by the reference detector and segmenter:
//! local-mean thresholding, 8-connected labeling, Otsu, exact Euclidean
//! distance transform and Zhang-Suen thinning.

use crate::types::ImageBuffer;

/// Row-major boolean raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<bool>,
}

impl Grid {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, cells: vec![false; width * height] }
    }

    pub fn from_cells(width: usize, height: usize, cells: Vec<bool>) -> Self {
        assert_eq!(cells.len(), width * height);
        Self { width, height, cells }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.cells[y * self.width + x]
    }

    /// Out-of-bounds reads are background.
    #[inline]
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.cells[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.cells[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }
}

const NEIGHBORS_8: [(isize, isize); 8] =
    [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

pub fn gray_plane(image: &ImageBuffer) -> Vec<u8> {
    if image.channels() == 1 {
        image.data().to_vec()
    } else {
        image.to_gray().into_data()
    }
}

/// Marks pixels darker than the mean of their `window`-sized neighborhood
/// by more than `offset`. Windows are truncated at the image border.
pub fn adaptive_threshold(gray: &[u8], width: usize, height: usize, window: usize, offset: f64) -> Grid {
    let stride = width + 1;
    let mut integral = vec![0u64; stride * (height + 1)];
    for y in 0..height {
        let mut row = 0u64;
        for x in 0..width {
            row += gray[y * width + x] as u64;
            integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
        }
    }
    let half = window / 2;
    let mut out = Grid::new(width, height);
    for y in 0..height {
        let y0 = y.saturating_sub(half);
        let y1 = (y + half + 1).min(height);
        for x in 0..width {
            let x0 = x.saturating_sub(half);
            let x1 = (x + half + 1).min(width);
            let sum = integral[y1 * stride + x1] + integral[y0 * stride + x0]
                - integral[y0 * stride + x1]
                - integral[y1 * stride + x0];
            let mean = sum as f64 / ((x1 - x0) * (y1 - y0)) as f64;
            if (gray[y * width + x] as f64) < mean - offset {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// One 8-connected foreground component.
#[derive(Debug, Clone)]
pub struct Component {
    pub pixels: Vec<(usize, usize)>,
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn bbox_width(&self) -> usize {
        self.x_max - self.x_min + 1
    }

    pub fn bbox_height(&self) -> usize {
        self.y_max - self.y_min + 1
    }

    /// Component rasterized into its own bounding box.
    pub fn local_grid(&self) -> Grid {
        let mut g = Grid::new(self.bbox_width(), self.bbox_height());
        for &(x, y) in &self.pixels {
            g.set(x - self.x_min, y - self.y_min, true);
        }
        g
    }
}

/// 8-connected components in raster-scan order of their first pixel.
pub fn connected_components(grid: &Grid) -> Vec<Component> {
    let mut seen = vec![false; grid.cells.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..grid.cells.len() {
        if !grid.cells[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (sx, sy) = (start % grid.width, start / grid.width);
        let mut comp = Component { pixels: Vec::new(), x_min: sx, y_min: sy, x_max: sx, y_max: sy };
        while let Some(i) = stack.pop() {
            let (x, y) = (i % grid.width, i / grid.width);
            comp.pixels.push((x, y));
            comp.x_min = comp.x_min.min(x);
            comp.x_max = comp.x_max.max(x);
            comp.y_min = comp.y_min.min(y);
            comp.y_max = comp.y_max.max(y);
            for (dx, dy) in NEIGHBORS_8 {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if grid.get_signed(nx, ny) {
                    let j = ny as usize * grid.width + nx as usize;
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        comp.pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        out.push(comp);
    }
    out
}

/// Fills background regions not 4-connected to the grid border.
pub fn fill_holes(grid: &Grid) -> Grid {
    let (w, h) = (grid.width, grid.height);
    let mut outside = vec![false; w * h];
    let mut stack = Vec::new();
    for x in 0..w {
        for y in [0, h - 1] {
            if !grid.get(x, y) && !outside[y * w + x] {
                outside[y * w + x] = true;
                stack.push((x, y));
            }
        }
    }
    for y in 0..h {
        for x in [0, w - 1] {
            if !grid.get(x, y) && !outside[y * w + x] {
                outside[y * w + x] = true;
                stack.push((x, y));
            }
        }
    }
    while let Some((x, y)) = stack.pop() {
        for (dx, dy) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if !grid.cells[j] && !outside[j] {
                outside[j] = true;
                stack.push((nx as usize, ny as usize));
            }
        }
    }
    Grid::from_cells(w, h, outside.into_iter().map(|o| !o).collect())
}

/// Otsu threshold over 8-bit levels: class 0 is `level <= t`. Returns `None`
/// when no cut separates two non-empty classes with positive variance.
pub fn otsu_threshold(gray: &[u8]) -> Option<u8> {
    let mut hist = [0u64; 256];
    for &g in gray {
        hist[g as usize] += 1;
    }
    let total = gray.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    let mut best: Option<(u8, f64)> = None;
    for (t, &count) in hist.iter().enumerate().take(255) {
        w0 += count as f64;
        sum0 += t as f64 * count as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if between > 0.0 && best.is_none_or(|(_, b)| between > b) {
            best = Some((t as u8, between));
        }
    }
    best.map(|(t, _)| t)
}

/// 1-D squared-distance transform (Felzenszwalb & Huttenlocher lower envelope).
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    // skip leading infinities so the envelope starts at a finite parabola
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact Euclidean distance from each foreground pixel center to the nearest
/// background pixel center; everything outside the grid is background.
pub fn distance_transform(grid: &Grid) -> Vec<f64> {
    // pad by one so the exterior acts as background
    let (w, h) = (grid.width + 2, grid.height + 2);
    let mut sq = vec![0.0f64; w * h];
    for y in 0..grid.height {
        for x in 0..grid.width {
            if grid.get(x, y) {
                sq[(y + 1) * w + x + 1] = f64::INFINITY;
            }
        }
    }
    let mut col = vec![0.0; h];
    let mut tmp = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = sq[y * w + x];
        }
        edt_1d(&col, &mut tmp);
        for y in 0..h {
            sq[y * w + x] = tmp[y];
        }
    }
    let mut row = vec![0.0; w];
    let mut tmp = vec![0.0; w];
    for y in 0..h {
        row.copy_from_slice(&sq[y * w..(y + 1) * w]);
        edt_1d(&row, &mut tmp);
        sq[y * w..(y + 1) * w].copy_from_slice(&tmp);
    }
    let mut out = vec![0.0; grid.width * grid.height];
    for y in 0..grid.height {
        for x in 0..grid.width {
            out[y * grid.width + x] = sq[(y + 1) * w + x + 1].sqrt();
        }
    }
    out
}

/// Zhang-Suen thinning to an 8-connected one-pixel-wide skeleton.
pub fn thin(grid: &Grid) -> Grid {
    let mut g = grid.clone();
    let mut to_clear = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            to_clear.clear();
            for y in 0..g.height {
                for x in 0..g.width {
                    if !g.get(x, y) {
                        continue;
                    }
                    let (xi, yi) = (x as isize, y as isize);
                    // P2..P9 clockwise from north
                    let p = [
                        g.get_signed(xi, yi - 1),
                        g.get_signed(xi + 1, yi - 1),
                        g.get_signed(xi + 1, yi),
                        g.get_signed(xi + 1, yi + 1),
                        g.get_signed(xi, yi + 1),
                        g.get_signed(xi - 1, yi + 1),
                        g.get_signed(xi - 1, yi),
                        g.get_signed(xi - 1, yi - 1),
                    ];
                    let b = p.iter().filter(|v| **v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
                    let remove = if pass == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if remove {
                        to_clear.push((x, y));
                    }
                }
            }
            changed |= !to_clear.is_empty();
            for &(x, y) in &to_clear {
                g.set(x, y, false);
            }
        }
        if !changed {
            return g;
        }
    }
}

/// Path length of a skeleton: axial links count 1, diagonal links √2
/// (skipped where an axial corner already joins the pair), plus one pixel's
/// length per connected piece so a lone pixel measures 1.
pub fn skeleton_path_length(skel: &Grid) -> f64 {
    let mut length = 0.0;
    for y in 0..skel.height {
        for x in 0..skel.width {
            if !skel.get(x, y) {
                continue;
            }
            let (xi, yi) = (x as isize, y as isize);
            // each undirected link counted once: east, south, south-east, south-west
            if skel.get_signed(xi + 1, yi) {
                length += 1.0;
            }
            if skel.get_signed(xi, yi + 1) {
                length += 1.0;
            }
            for dx in [1isize, -1] {
                if skel.get_signed(xi + dx, yi + 1)
                    && !skel.get_signed(xi + dx, yi)
                    && !skel.get_signed(xi, yi + 1)
                {
                    length += std::f64::consts::SQRT_2;
                }
            }
        }
    }
    length + connected_components(skel).len() as f64
}

/// Number of 8-neighbors set.
pub fn neighbor_count(grid: &Grid, x: usize, y: usize) -> usize {
    NEIGHBORS_8
        .iter()
        .filter(|(dx, dy)| grid.get_signed(x as isize + dx, y as isize + dy))
        .count()
}

pub fn neighbors_8() -> &'static [(isize, isize); 8] {
    &NEIGHBORS_8
}
