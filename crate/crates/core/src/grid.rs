//! 3×3 grid images holding nine temporally ordered tiles.
//!
//! Frames are placed in serpentine (boustrophedon) order so that every pair of
//! consecutive frames occupies 4-neighbouring cells:
//!
//! ```text
//!   1 2 3
//!   6 5 4
//!   7 8 9
//! ```

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::frame::Frame;

pub const GRID_SIDE: usize = 3;
pub const GRID_FRAMES: usize = GRID_SIDE * GRID_SIDE;

/// `(row, col)` with both in `0..3`.
pub type Cell = (usize, usize);

/// Cell of the 1-based temporal index `t` under serpentine placement.
pub fn serpentine_cell(t: usize) -> Result<Cell> {
    if !(1..=GRID_FRAMES).contains(&t) {
        return Err(Error::invalid(format!("temporal index {t} outside 1..={GRID_FRAMES}")));
    }
    let i = t - 1;
    let row = i / GRID_SIDE;
    let along = i % GRID_SIDE;
    let col = if row.is_multiple_of(2) {
        along
    } else {
        GRID_SIDE - 1 - along
    };
    Ok((row, col))
}

/// Bijection between temporal indices and grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLayout {
    cells: [Cell; GRID_FRAMES],
}

impl Default for GridLayout {
    fn default() -> Self {
        Self::serpentine()
    }
}

impl GridLayout {
    pub fn serpentine() -> Self {
        let mut cells = [(0, 0); GRID_FRAMES];
        for (i, cell) in cells.iter_mut().enumerate() {
            *cell = serpentine_cell(i + 1).expect("index in range");
        }
        Self { cells }
    }

    /// `cells[t - 1]` is where frame `t` goes. Fails unless every cell is used exactly once.
    pub fn from_cells(cells: [Cell; GRID_FRAMES]) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for &(r, c) in &cells {
            if r >= GRID_SIDE || c >= GRID_SIDE {
                return Err(Error::invalid(format!("cell ({r},{c}) outside the 3x3 grid")));
            }
            if !seen.insert((r, c)) {
                return Err(Error::invalid(format!("cell ({r},{c}) assigned twice")));
            }
        }
        Ok(Self { cells })
    }

    /// Cell holding the 1-based temporal index `t`.
    pub fn cell_of_frame(&self, t: usize) -> Result<Cell> {
        if !(1..=GRID_FRAMES).contains(&t) {
            return Err(Error::invalid(format!("temporal index {t} outside 1..={GRID_FRAMES}")));
        }
        Ok(self.cells[t - 1])
    }

    pub fn cells(&self) -> &[Cell; GRID_FRAMES] {
        &self.cells
    }
}

/// A `3H × 3W` RGB image made of nine `H × W` tiles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridImage {
    tile_width: u32,
    tile_height: u32,
    image: Frame,
}

impl GridImage {
    /// Wraps a full-size image, failing when either axis is not a multiple of 3.
    pub fn from_frame(image: Frame) -> Result<Self> {
        let (w, h) = image.dimensions();
        if w % GRID_SIDE as u32 != 0 || h % GRID_SIDE as u32 != 0 {
            return Err(Error::invalid(format!(
                "grid image is {w}x{h}; both axes must be divisible by {GRID_SIDE}"
            )));
        }
        Ok(Self {
            tile_width: w / GRID_SIDE as u32,
            tile_height: h / GRID_SIDE as u32,
            image,
        })
    }

    pub fn tile_width(&self) -> u32 {
        self.tile_width
    }

    pub fn tile_height(&self) -> u32 {
        self.tile_height
    }

    pub fn image(&self) -> &Frame {
        &self.image
    }

    pub fn into_image(self) -> Frame {
        self.image
    }

    fn origin(&self, (row, col): Cell) -> (u32, u32) {
        (col as u32 * self.tile_width, row as u32 * self.tile_height)
    }

    pub fn tile(&self, cell: Cell) -> Frame {
        assert!(cell.0 < GRID_SIDE && cell.1 < GRID_SIDE, "cell {cell:?} outside grid");
        let (x, y) = self.origin(cell);
        self.image
            .crop(x, y, self.tile_width, self.tile_height)
            .expect("tile lies inside the grid")
    }

    /// Cells whose tile has at least one nonzero channel.
    pub fn nonzero_cells(&self) -> Vec<Cell> {
        all_cells().filter(|&c| !self.tile(c).is_black()).collect()
    }
}

fn all_cells() -> impl Iterator<Item = Cell> {
    (0..GRID_SIDE).flat_map(|r| (0..GRID_SIDE).map(move |c| (r, c)))
}

/// Set of cells left visible by masking; everything else is zeroed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMask {
    visible: BTreeSet<Cell>,
}

impl GridMask {
    pub fn new(cells: impl IntoIterator<Item = Cell>) -> Result<Self> {
        let visible: BTreeSet<Cell> = cells.into_iter().collect();
        if let Some(&(r, c)) = visible.iter().find(|(r, c)| *r >= GRID_SIDE || *c >= GRID_SIDE) {
            return Err(Error::invalid(format!("mask cell ({r},{c}) outside the 3x3 grid")));
        }
        Ok(Self { visible })
    }

    /// Only the top-left tile (the first observed frame) stays visible.
    pub fn first_frame() -> Self {
        Self {
            visible: BTreeSet::from([(0, 0)]),
        }
    }

    pub fn all() -> Self {
        Self {
            visible: all_cells().collect(),
        }
    }

    pub fn is_visible(&self, cell: Cell) -> bool {
        self.visible.contains(&cell)
    }

    pub fn visible_cells(&self) -> impl Iterator<Item = &Cell> {
        self.visible.iter()
    }
}

/// Tiles nine equally sized frames according to `layout`.
pub fn assemble_grid(frames: &[Frame], layout: &GridLayout) -> Result<GridImage> {
    if frames.len() != GRID_FRAMES {
        return Err(Error::invalid(format!(
            "a grid needs exactly {GRID_FRAMES} frames, got {}",
            frames.len()
        )));
    }
    let (w, h) = frames[0].dimensions();
    if let Some((t, f)) = frames.iter().enumerate().find(|(_, f)| f.dimensions() != (w, h)) {
        return Err(Error::invalid(format!(
            "frame {} is {}x{} but frame 1 is {w}x{h}",
            t + 1,
            f.width(),
            f.height()
        )));
    }
    let side = GRID_SIDE as u32;
    let mut canvas = Frame::filled(w * side, h * side, [0, 0, 0])?;
    for (frame, &(row, col)) in frames.iter().zip(layout.cells()) {
        canvas.paste(frame, col as u32 * w, row as u32 * h)?;
    }
    GridImage::from_frame(canvas)
}

/// Splits a grid back into its nine frames in temporal order.
pub fn disassemble_grid(grid: &GridImage, layout: &GridLayout) -> Vec<Frame> {
    layout.cells().iter().map(|&cell| grid.tile(cell)).collect()
}

/// Convenience for callers holding an arbitrary image: validates divisibility first.
pub fn split_image(image: Frame, layout: &GridLayout) -> Result<Vec<Frame>> {
    Ok(disassemble_grid(&GridImage::from_frame(image)?, layout))
}

/// Zeroes every tile outside `mask`.
pub fn apply_mask(grid: &GridImage, mask: &GridMask) -> GridImage {
    let mut out = grid.clone();
    let black = Frame::filled(grid.tile_width, grid.tile_height, [0, 0, 0]).expect("tile dimensions are positive");
    for cell in all_cells().filter(|&c| !mask.is_visible(c)) {
        let (x, y) = grid.origin(cell);
        out.image.paste(&black, x, y).expect("tile lies inside the grid");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray_frames(w: u32, h: u32) -> Vec<Frame> {
        (1..=9u8).map(|t| Frame::filled(w, h, [10 * t; 3]).unwrap()).collect()
    }

    #[test]
    fn serpentine_examples() {
        assert_eq!(serpentine_cell(1).unwrap(), (0, 0));
        assert_eq!(serpentine_cell(4).unwrap(), (1, 2));
        assert_eq!(serpentine_cell(9).unwrap(), (2, 2));
        assert!(serpentine_cell(0).is_err());
        assert!(serpentine_cell(10).is_err());
    }

    #[test]
    fn serpentine_is_bijective_and_adjacent() {
        let layout = GridLayout::serpentine();
        let cells: BTreeSet<_> = layout.cells().iter().copied().collect();
        assert_eq!(cells.len(), 9);
        for t in 1..9 {
            let (r0, c0) = layout.cell_of_frame(t).unwrap();
            let (r1, c1) = layout.cell_of_frame(t + 1).unwrap();
            assert_eq!(r0.abs_diff(r1) + c0.abs_diff(c1), 1, "t={t}");
        }
        assert!(GridLayout::from_cells(*layout.cells()).is_ok());
        let mut dup = *layout.cells();
        dup[8] = dup[0];
        assert!(GridLayout::from_cells(dup).is_err());
    }

    #[test]
    fn uniform_red_assembles_to_uniform_grid() {
        let red = Frame::filled(4, 5, [255, 0, 0]).unwrap();
        let grid = assemble_grid(&vec![red; 9], &GridLayout::serpentine()).unwrap();
        assert_eq!(grid.image().dimensions(), (12, 15));
        assert!(grid.image().pixels().chunks(3).all(|p| p == [255, 0, 0]));
    }

    #[test]
    fn gray_level_lands_in_serpentine_cell() {
        let grid = assemble_grid(&gray_frames(3, 2), &GridLayout::serpentine()).unwrap();
        // (1,0) holds frame 6
        assert_eq!(grid.tile((1, 0)).get(0, 0), [60; 3]);
        assert_eq!(grid.tile((1, 2)).get(1, 1), [40; 3]);
    }

    #[test]
    fn disassemble_matches_cell_map_by_checksum() {
        let frames: Vec<Frame> = (0..9u32)
            .map(|t| Frame::from_fn(4, 4, |x, y| [(t * 17 + x) as u8, (y * 3) as u8, t as u8]).unwrap())
            .collect();
        let layout = GridLayout::serpentine();
        let grid = assemble_grid(&frames, &layout).unwrap();
        let checksum = |f: &Frame| f.pixels().iter().map(|&v| v as u64).sum::<u64>();
        // brute force: find which cell carries each frame's checksum by scanning all cells
        for (t, f) in frames.iter().enumerate() {
            let hits: Vec<_> = (0..3)
                .flat_map(|r| (0..3).map(move |c| (r, c)))
                .filter(|&c| checksum(&grid.tile(c)) == checksum(f))
                .collect();
            assert_eq!(hits, vec![layout.cell_of_frame(t + 1).unwrap()]);
        }
        assert_eq!(disassemble_grid(&grid, &layout), frames);
    }

    #[test]
    fn rejects_bad_frame_sets() {
        let layout = GridLayout::serpentine();
        assert!(assemble_grid(&gray_frames(2, 2)[..8], &layout).is_err());
        let mut frames = gray_frames(2, 2);
        frames[4] = Frame::filled(3, 2, [0; 3]).unwrap();
        assert!(assemble_grid(&frames, &layout).is_err());
        assert!(GridImage::from_frame(Frame::filled(100, 99, [0; 3]).unwrap()).is_err());
    }

    #[test]
    fn first_frame_mask_keeps_only_top_left() {
        let grid = assemble_grid(&gray_frames(3, 3), &GridLayout::serpentine()).unwrap();
        let masked = apply_mask(&grid, &GridMask::first_frame());
        assert_eq!(masked.nonzero_cells(), vec![(0, 0)]);
        assert_eq!(masked.tile((0, 0)), grid.tile((0, 0)));
        assert_eq!(apply_mask(&grid, &GridMask::all()), grid);
        assert!(GridMask::new([(3, 0)]).is_err());
    }

    fn frame_set() -> impl Strategy<Value = Vec<Frame>> {
        (1u32..12, 1u32..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(proptest::collection::vec(any::<u8>(), (w * h * 3) as usize), 9)
                .prop_map(move |bufs| bufs.into_iter().map(|b| Frame::new(w, h, b).unwrap()).collect())
        })
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(frames in frame_set()) {
            let layout = GridLayout::serpentine();
            let grid = assemble_grid(&frames, &layout).unwrap();
            prop_assert_eq!(disassemble_grid(&grid, &layout), frames);
        }

        #[test]
        fn mask_is_idempotent(frames in frame_set(), cells in proptest::collection::btree_set((0usize..3, 0usize..3), 0..9)) {
            let grid = assemble_grid(&frames, &GridLayout::serpentine()).unwrap();
            let mask = GridMask::new(cells.iter().copied()).unwrap();
            let once = apply_mask(&grid, &mask);
            prop_assert_eq!(&apply_mask(&once, &mask), &once);
            for r in 0..3 {
                for c in 0..3 {
                    if cells.contains(&(r, c)) {
                        prop_assert_eq!(once.tile((r, c)), grid.tile((r, c)));
                    } else {
                        prop_assert!(once.tile((r, c)).is_black());
                    }
                }
            }
        }
    }
}
