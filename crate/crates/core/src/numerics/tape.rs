//! Reverse-mode tape over matrix values.
//!
//! A forward pass records primitive ops eagerly; `backward` walks the
//! recording in reverse and accumulates gradients additively, writing
//! parameter gradients into a [`GradBuffer`] so several workers can run
//! against one frozen [`ParamStore`] snapshot.
//!
//! Values carry a batch dimension in their columns: a "vector" activation
//! for B batched samples is an `h×B` matrix. Ops that reduce (softmax,
//! squared error) work per column.

use super::{GradBuffer, Matrix, NumericsError, ParamId, ParamStore};

pub type ValueId = usize;

#[derive(Debug, Clone)]
enum Op {
    /// Leaf holding externally supplied data; no gradient flows out.
    Constant,
    /// y = W·x + b.
    Dense { w: ParamId, b: Option<ParamId>, x: ValueId },
    /// Vertical concatenation.
    Concat(Vec<ValueId>),
    /// Elementwise sum of several same-shape values.
    Sum(Vec<ValueId>),
    /// Elementwise product.
    Mul(ValueId, ValueId),
    Relu(ValueId),
    Elu(ValueId),
    Sigmoid(ValueId),
    Tanh(ValueId),
    /// Column-wise softmax over rows.
    Softmax(ValueId),
    /// Extract row r as a 1×B value.
    Row(ValueId, usize),
    /// out[i][c] = row[0][c] · mat[i][c].
    ScaleRows { row: ValueId, mat: ValueId },
    /// out[0][c] = x[rows[c]][c].
    GatherPerColumn { x: ValueId, rows: Vec<usize> },
    /// Contiguous column slice x[:, start..start+width].
    SelectCols { x: ValueId, start: usize, width: usize },
    /// Horizontal (column-wise) concatenation.
    HCat(Vec<ValueId>),
    /// Column gather: out[:, j] = x[:, map[j]].
    PermuteCols { x: ValueId, map: Vec<usize> },
    /// Values are laid out in column blocks of `width`; output block g is
    /// the elementwise sum of the input blocks listed in groups[g]
    /// (empty group → zeros).
    AggregateBlocks { x: ValueId, width: usize, groups: Vec<Vec<usize>> },
    /// Softmax over block members of a 1-row value: for each group and
    /// each lane b < width, softmax across {x[0][k·width+b] : k ∈ group}.
    SegmentedSoftmax { x: ValueId, width: usize, groups: Vec<Vec<usize>> },
    /// 1×1 scalar: Σ_c (x[0][c] − target[c])².
    SquaredError { x: ValueId, target: Vec<f64> },
    /// 1×1 scalar: Σ_ij x[i][j]².
    SumSquares(ValueId),
    ScaleConst(ValueId, f64),
}

pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Matrix>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { ops: Vec::new(), values: Vec::new() }
    }

    pub fn value(&self, id: ValueId) -> &Matrix {
        &self.values[id]
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op, value: Matrix) -> ValueId {
        self.values.push(value);
        self.ops.push(op);
        self.values.len() - 1
    }

    pub fn constant(&mut self, value: Matrix) -> ValueId {
        self.push(Op::Constant, value)
    }

    /// y = W·x + b. Shapes: W r×k, x k×B, b r×1.
    pub fn dense(
        &mut self,
        store: &ParamStore,
        w: ParamId,
        b: Option<ParamId>,
        x: ValueId,
    ) -> Result<ValueId, NumericsError> {
        let wm = store.value(w);
        let xm = &self.values[x];
        if wm.cols() != xm.rows() {
            return Err(NumericsError::ShapeMismatch {
                op: "dense",
                expected: (wm.cols(), xm.cols()),
                got: xm.shape(),
            });
        }
        let mut out = Matrix::zeros(wm.rows(), xm.cols());
        wm.matmul_into(xm, &mut out);
        if let Some(b) = b {
            let bm = store.value(b);
            if bm.shape() != (wm.rows(), 1) {
                return Err(NumericsError::ShapeMismatch {
                    op: "dense bias",
                    expected: (wm.rows(), 1),
                    got: bm.shape(),
                });
            }
            out.add_col_broadcast(bm);
        }
        Ok(self.push(Op::Dense { w, b, x }, out))
    }

    pub fn concat(&mut self, parts: &[ValueId]) -> Result<ValueId, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::EmptyInput);
        }
        let cols = self.values[parts[0]].cols();
        let mut rows = 0;
        for &p in parts {
            if self.values[p].cols() != cols {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat",
                    expected: (self.values[p].rows(), cols),
                    got: self.values[p].shape(),
                });
            }
            rows += self.values[p].rows();
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let m = &self.values[p];
            for r in 0..m.rows() {
                out.row_mut(at + r).copy_from_slice(m.row(r));
            }
            at += m.rows();
        }
        Ok(self.push(Op::Concat(parts.to_vec()), out))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, NumericsError> {
        self.sum(&[a, b])
    }

    pub fn sum(&mut self, parts: &[ValueId]) -> Result<ValueId, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::EmptyInput);
        }
        let shape = self.values[parts[0]].shape();
        let mut out = self.values[parts[0]].clone();
        for &p in &parts[1..] {
            if self.values[p].shape() != shape {
                return Err(NumericsError::ShapeMismatch {
                    op: "sum",
                    expected: shape,
                    got: self.values[p].shape(),
                });
            }
            out.add_in_place(&self.values[p]);
        }
        Ok(self.push(Op::Sum(parts.to_vec()), out))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, NumericsError> {
        if self.values[a].shape() != self.values[b].shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "mul",
                expected: self.values[a].shape(),
                got: self.values[b].shape(),
            });
        }
        let mut out = self.values[a].clone();
        for (o, x) in out.as_mut_slice().iter_mut().zip(self.values[b].as_slice()) {
            *o *= *x;
        }
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let out = self.values[x].map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(Op::Relu(x), out)
    }

    /// ELU with α = 1.
    pub fn elu(&mut self, x: ValueId) -> ValueId {
        let out = self.values[x].map(|v| if v > 0.0 { v } else { v.max(-700.0).exp_m1() });
        self.push(Op::Elu(x), out)
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        let out = self.values[x].map(sigmoid);
        self.push(Op::Sigmoid(x), out)
    }

    pub fn tanh(&mut self, x: ValueId) -> ValueId {
        let out = self.values[x].map(fast_tanh);
        self.push(Op::Tanh(x), out)
    }

    /// Column-wise softmax, max-subtracted for stability.
    pub fn softmax(&mut self, x: ValueId) -> Result<ValueId, NumericsError> {
        let m = &self.values[x];
        if m.rows() == 0 || m.cols() == 0 {
            return Err(NumericsError::EmptyInput);
        }
        let out = softmax_cols(m);
        Ok(self.push(Op::Softmax(x), out))
    }

    pub fn row(&mut self, x: ValueId, r: usize) -> ValueId {
        let m = &self.values[x];
        let out = Matrix::from_vec(1, m.cols(), m.row(r).to_vec()).expect("row shape");
        self.push(Op::Row(x, r), out)
    }

    pub fn scale_rows(&mut self, row: ValueId, mat: ValueId) -> Result<ValueId, NumericsError> {
        let rm = &self.values[row];
        let mm = &self.values[mat];
        if rm.rows() != 1 || rm.cols() != mm.cols() {
            return Err(NumericsError::ShapeMismatch {
                op: "scale_rows",
                expected: (1, mm.cols()),
                got: rm.shape(),
            });
        }
        let mut out = mm.clone();
        for i in 0..out.rows() {
            for c in 0..out.cols() {
                let v = out.get(i, c) * rm.get(0, c);
                out.set(i, c, v);
            }
        }
        Ok(self.push(Op::ScaleRows { row, mat }, out))
    }

    /// Per-column gather: out[0][c] = x[rows[c]][c].
    pub fn gather_per_column(
        &mut self,
        x: ValueId,
        rows: Vec<usize>,
    ) -> Result<ValueId, NumericsError> {
        let m = &self.values[x];
        if rows.len() != m.cols() || rows.iter().any(|&r| r >= m.rows()) {
            return Err(NumericsError::ShapeMismatch {
                op: "gather_per_column",
                expected: (m.rows(), m.cols()),
                got: (rows.len(), 1),
            });
        }
        let mut out = Matrix::zeros(1, m.cols());
        for (c, &r) in rows.iter().enumerate() {
            out.set(0, c, m.get(r, c));
        }
        Ok(self.push(Op::GatherPerColumn { x, rows }, out))
    }

    /// Contiguous column slice.
    pub fn select_cols(
        &mut self,
        x: ValueId,
        start: usize,
        width: usize,
    ) -> Result<ValueId, NumericsError> {
        let m = &self.values[x];
        if start + width > m.cols() {
            return Err(NumericsError::ShapeMismatch {
                op: "select_cols",
                expected: (m.rows(), m.cols()),
                got: (start, width),
            });
        }
        let mut out = Matrix::zeros(m.rows(), width);
        for r in 0..m.rows() {
            out.row_mut(r).copy_from_slice(&m.row(r)[start..start + width]);
        }
        Ok(self.push(Op::SelectCols { x, start, width }, out))
    }

    /// Column-wise concatenation of same-height values.
    pub fn hcat(&mut self, parts: &[ValueId]) -> Result<ValueId, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::EmptyInput);
        }
        let rows = self.values[parts[0]].rows();
        let mut cols = 0;
        for &p in parts {
            if self.values[p].rows() != rows {
                return Err(NumericsError::ShapeMismatch {
                    op: "hcat",
                    expected: (rows, self.values[p].cols()),
                    got: self.values[p].shape(),
                });
            }
            cols += self.values[p].cols();
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let m = &self.values[p];
            for r in 0..rows {
                out.row_mut(r)[at..at + m.cols()].copy_from_slice(m.row(r));
            }
            at += m.cols();
        }
        Ok(self.push(Op::HCat(parts.to_vec()), out))
    }

    /// Column gather by index map.
    pub fn permute_cols(&mut self, x: ValueId, map: Vec<usize>) -> Result<ValueId, NumericsError> {
        let m = &self.values[x];
        if map.iter().any(|&c| c >= m.cols()) {
            return Err(NumericsError::ShapeMismatch {
                op: "permute_cols",
                expected: (m.rows(), m.cols()),
                got: (map.len(), 1),
            });
        }
        let mut out = Matrix::zeros(m.rows(), map.len());
        for r in 0..m.rows() {
            let src = m.row(r);
            for (j, &c) in map.iter().enumerate() {
                out.row_mut(r)[j] = src[c];
            }
        }
        Ok(self.push(Op::PermuteCols { x, map }, out))
    }

    /// Sums column blocks of `width` into one output block per group.
    pub fn aggregate_blocks(
        &mut self,
        x: ValueId,
        width: usize,
        groups: Vec<Vec<usize>>,
    ) -> Result<ValueId, NumericsError> {
        let m = &self.values[x];
        let blocks = m.cols() / width.max(1);
        if width == 0 || m.cols() % width != 0 {
            return Err(NumericsError::ShapeMismatch {
                op: "aggregate_blocks",
                expected: (m.rows(), m.cols()),
                got: (width, 0),
            });
        }
        if groups.iter().flatten().any(|&b| b >= blocks) {
            return Err(NumericsError::ShapeMismatch {
                op: "aggregate_blocks",
                expected: (blocks, width),
                got: (groups.len(), 0),
            });
        }
        let mut out = Matrix::zeros(m.rows(), groups.len() * width);
        for r in 0..m.rows() {
            let src = m.row(r);
            let dst = out.row_mut(r);
            for (g, members) in groups.iter().enumerate() {
                let at = g * width;
                for &blk in members {
                    let s = &src[blk * width..(blk + 1) * width];
                    for c in 0..width {
                        dst[at + c] += s[c];
                    }
                }
            }
        }
        Ok(self.push(Op::AggregateBlocks { x, width, groups }, out))
    }

    /// Groupwise softmax over the block members of a single-row value,
    /// max-subtracted per (group, lane).
    pub fn segmented_softmax(
        &mut self,
        x: ValueId,
        width: usize,
        groups: Vec<Vec<usize>>,
    ) -> Result<ValueId, NumericsError> {
        let m = &self.values[x];
        if m.rows() != 1 || width == 0 || m.cols() % width != 0 {
            return Err(NumericsError::ShapeMismatch {
                op: "segmented_softmax",
                expected: (1, m.cols()),
                got: m.shape(),
            });
        }
        let blocks = m.cols() / width;
        if groups.iter().flatten().any(|&b| b >= blocks) {
            return Err(NumericsError::EmptyInput);
        }
        let mut out = Matrix::zeros(1, m.cols());
        let src = m.row(0);
        for members in &groups {
            if members.is_empty() {
                continue;
            }
            for b in 0..width {
                let mut max = f64::NEG_INFINITY;
                for &k in members {
                    max = max.max(src[k * width + b]);
                }
                let mut denom = 0.0;
                for &k in members {
                    let e = (src[k * width + b] - max).max(-700.0).exp();
                    out.row_mut(0)[k * width + b] = e;
                    denom += e;
                }
                for &k in members {
                    out.row_mut(0)[k * width + b] /= denom;
                }
            }
        }
        Ok(self.push(Op::SegmentedSoftmax { x, width, groups }, out))
    }

    /// Σ_c (x[0][c] − target[c])², a 1×1 scalar.
    pub fn squared_error(
        &mut self,
        x: ValueId,
        target: Vec<f64>,
    ) -> Result<ValueId, NumericsError> {
        let m = &self.values[x];
        if m.rows() != 1 || m.cols() != target.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "squared_error",
                expected: (1, target.len()),
                got: m.shape(),
            });
        }
        let s: f64 = m.row(0).iter().zip(&target).map(|(x, t)| (x - t) * (x - t)).sum();
        let out = Matrix::from_vec(1, 1, vec![s]).unwrap();
        Ok(self.push(Op::SquaredError { x, target }, out))
    }

    /// Σ x², a 1×1 scalar.
    pub fn sum_squares(&mut self, x: ValueId) -> ValueId {
        let s: f64 = self.values[x].as_slice().iter().map(|v| v * v).sum();
        let out = Matrix::from_vec(1, 1, vec![s]).unwrap();
        self.push(Op::SumSquares(x), out)
    }

    pub fn scale_const(&mut self, x: ValueId, c: f64) -> ValueId {
        let out = self.values[x].map(|v| v * c);
        self.push(Op::ScaleConst(x, c), out)
    }

    pub fn scalar(&self, id: ValueId) -> f64 {
        debug_assert_eq!(self.values[id].shape(), (1, 1));
        self.values[id].get(0, 0)
    }

    /// Reverse pass seeded with dL/d(seed) = 1. Parameter gradients
    /// accumulate into `grads`; the tape itself is consumed conceptually
    /// (value gradients are local to this call).
    pub fn backward(&self, seed: ValueId, store: &ParamStore, grads: &mut GradBuffer) {
        let seed_shape = self.values[seed].shape();
        let mut seed_grad = Matrix::zeros(seed_shape.0, seed_shape.1);
        seed_grad.fill(1.0);
        self.backward_seeded(vec![(seed, seed_grad)], store, grads);
    }

    /// Reverse pass from explicit adjoints (dL/d(value) per seed).
    pub fn backward_seeded(
        &self,
        seeds: Vec<(ValueId, Matrix)>,
        store: &ParamStore,
        grads: &mut GradBuffer,
    ) {
        if seeds.is_empty() {
            return;
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.values.len()];
        let mut top = 0;
        for (id, g) in seeds {
            debug_assert_eq!(self.values[id].shape(), g.shape());
            top = top.max(id);
            match &mut adj[id] {
                Some(acc) => acc.add_in_place(&g),
                slot @ None => *slot = Some(g),
            }
        }
        let seed = top;

        for id in (0..=seed).rev() {
            let dy = match adj[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.ops[id] {
                Op::Constant => {}
                Op::Dense { w, b, x } => {
                    Matrix::grad_weights_into(&dy, &self.values[*x], grads.get_mut(*w));
                    if let Some(b) = b {
                        let gb = grads.get_mut(*b);
                        for i in 0..dy.rows() {
                            let s: f64 = dy.row(i).iter().sum();
                            let v = gb.get(i, 0) + s;
                            gb.set(i, 0, v);
                        }
                    }
                    // constant leaves absorb no gradient
                    if !matches!(self.ops[*x], Op::Constant) {
                        let dx = ensure(&mut adj[*x], self.values[*x].shape());
                        Matrix::grad_input_into(store.value(*w), &dy, dx);
                    }
                }
                Op::Concat(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let rows = self.values[p].rows();
                        let dp = ensure(&mut adj[p], self.values[p].shape());
                        for r in 0..rows {
                            for (a, b) in dp.row_mut(r).iter_mut().zip(dy.row(at + r)) {
                                *a += *b;
                            }
                        }
                        at += rows;
                    }
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        ensure(&mut adj[p], self.values[p].shape()).add_in_place(&dy);
                    }
                }
                Op::Mul(a, b) => {
                    {
                        let da = ensure(&mut adj[*a], self.values[*a].shape());
                        for ((g, d), x) in
                            da.as_mut_slice().iter_mut().zip(dy.as_slice()).zip(self.values[*b].as_slice())
                        {
                            *g += d * x;
                        }
                    }
                    let db = ensure(&mut adj[*b], self.values[*b].shape());
                    for ((g, d), x) in
                        db.as_mut_slice().iter_mut().zip(dy.as_slice()).zip(self.values[*a].as_slice())
                    {
                        *g += d * x;
                    }
                }
                Op::Relu(x) => {
                    let dx = ensure(&mut adj[*x], self.values[*x].shape());
                    for ((g, d), v) in
                        dx.as_mut_slice().iter_mut().zip(dy.as_slice()).zip(self.values[*x].as_slice())
                    {
                        if *v > 0.0 {
                            *g += d;
                        }
                    }
                }
                Op::Elu(x) => {
                    let dx = ensure(&mut adj[*x], self.values[*x].shape());
                    for ((g, d), y) in
                        dx.as_mut_slice().iter_mut().zip(dy.as_slice()).zip(self.values[id].as_slice())
                    {
                        // d/dx elu = 1 for x>0 else elu(x)+1
                        *g += if *y > 0.0 { *d } else { d * (y + 1.0) };
                    }
                }
                Op::Sigmoid(x) => {
                    let dx = ensure(&mut adj[*x], self.values[*x].shape());
                    for ((g, d), y) in
                        dx.as_mut_slice().iter_mut().zip(dy.as_slice()).zip(self.values[id].as_slice())
                    {
                        *g += d * y * (1.0 - y);
                    }
                }
                Op::Tanh(x) => {
                    let dx = ensure(&mut adj[*x], self.values[*x].shape());
                    for ((g, d), y) in
                        dx.as_mut_slice().iter_mut().zip(dy.as_slice()).zip(self.values[id].as_slice())
                    {
                        *g += d * (1.0 - y * y);
                    }
                }
                Op::Softmax(x) => {
                    let y = &self.values[id];
                    let dx = ensure(&mut adj[*x], self.values[*x].shape());
                    for c in 0..y.cols() {
                        let mut dot = 0.0;
                        for r in 0..y.rows() {
                            dot += dy.get(r, c) * y.get(r, c);
                        }
                        for r in 0..y.rows() {
                            let g = dx.get(r, c) + y.get(r, c) * (dy.get(r, c) - dot);
                            dx.set(r, c, g);
                        }
                    }
                }
                Op::Row(x, r) => {
                    let dx = ensure(&mut adj[*x], self.values[*x].shape());
                    for (c, d) in dy.row(0).iter().enumerate() {
                        let g = dx.get(*r, c) + d;
                        dx.set(*r, c, g);
                    }
                }
                Op::ScaleRows { row, mat } => {
                    {
                        let drow = ensure(&mut adj[*row], self.values[*row].shape());
                        let mm = &self.values[*mat];
                        for c in 0..mm.cols() {
                            let mut s = 0.0;
                            for i in 0..mm.rows() {
                                s += dy.get(i, c) * mm.get(i, c);
                            }
                            drow.set(0, c, drow.get(0, c) + s);
                        }
                    }
                    let rm = &self.values[*row];
                    let dmat = ensure(&mut adj[*mat], self.values[*mat].shape());
                    for i in 0..dmat.rows() {
                        for c in 0..dmat.cols() {
                            let g = dmat.get(i, c) + dy.get(i, c) * rm.get(0, c);
                            dmat.set(i, c, g);
                        }
                    }
                }
                Op::GatherPerColumn { x, rows } => {
                    let dx = ensure(&mut adj[*x], self.values[*x].shape());
                    for (c, &r) in rows.iter().enumerate() {
                        let g = dx.get(r, c) + dy.get(0, c);
                        dx.set(r, c, g);
                    }
                }
                Op::SelectCols { x, start, width } => {
                    let dx = ensure(&mut adj[*x], self.values[*x].shape());
                    for r in 0..dy.rows() {
                        let src = dy.row(r);
                        let dst = &mut dx.row_mut(r)[*start..*start + *width];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += *s;
                        }
                    }
                }
                Op::HCat(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let cols = self.values[p].cols();
                        let dp = ensure(&mut adj[p], self.values[p].shape());
                        for r in 0..dp.rows() {
                            let src = &dy.row(r)[at..at + cols];
                            for (d, s) in dp.row_mut(r).iter_mut().zip(src) {
                                *d += *s;
                            }
                        }
                        at += cols;
                    }
                }
                Op::PermuteCols { x, map } => {
                    let dx = ensure(&mut adj[*x], self.values[*x].shape());
                    for r in 0..dy.rows() {
                        let src = dy.row(r);
                        let dst = dx.row_mut(r);
                        for (j, &c) in map.iter().enumerate() {
                            dst[c] += src[j];
                        }
                    }
                }
                Op::AggregateBlocks { x, width, groups } => {
                    let dx = ensure(&mut adj[*x], self.values[*x].shape());
                    for r in 0..dy.rows() {
                        let src = dy.row(r);
                        let dst = dx.row_mut(r);
                        for (g, members) in groups.iter().enumerate() {
                            let from = &src[g * width..(g + 1) * width];
                            for &blk in members {
                                let d = &mut dst[blk * width..(blk + 1) * width];
                                for c in 0..*width {
                                    d[c] += from[c];
                                }
                            }
                        }
                    }
                }
                Op::SegmentedSoftmax { x, width, groups } => {
                    let y = &self.values[id];
                    let dx = ensure(&mut adj[*x], self.values[*x].shape());
                    let yrow = y.row(0);
                    let dyrow = dy.row(0);
                    for members in groups {
                        if members.is_empty() {
                            continue;
                        }
                        for b in 0..*width {
                            let mut dot = 0.0;
                            for &k in members {
                                let at = k * width + b;
                                dot += dyrow[at] * yrow[at];
                            }
                            for &k in members {
                                let at = k * width + b;
                                dx.row_mut(0)[at] += yrow[at] * (dyrow[at] - dot);
                            }
                        }
                    }
                }
                Op::SquaredError { x, target } => {
                    let d = dy.get(0, 0);
                    let xv = &self.values[*x];
                    let dx = ensure(&mut adj[*x], xv.shape());
                    for (c, t) in target.iter().enumerate() {
                        let g = dx.get(0, c) + d * 2.0 * (xv.get(0, c) - t);
                        dx.set(0, c, g);
                    }
                }
                Op::SumSquares(x) => {
                    let d = dy.get(0, 0);
                    let dx = ensure(&mut adj[*x], self.values[*x].shape());
                    for (g, v) in dx.as_mut_slice().iter_mut().zip(self.values[*x].as_slice()) {
                        *g += d * 2.0 * v;
                    }
                }
                Op::ScaleConst(x, c) => {
                    let dx = ensure(&mut adj[*x], self.values[*x].shape());
                    for (g, d) in dx.as_mut_slice().iter_mut().zip(dy.as_slice()) {
                        *g += d * c;
                    }
                }
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn ensure(slot: &mut Option<Matrix>, shape: (usize, usize)) -> &mut Matrix {
    slot.get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

pub(crate) use super::fastmath::{sigmoid, tanh as fast_tanh};

fn softmax_cols(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for c in 0..m.cols() {
        let mut max = f64::NEG_INFINITY;
        for r in 0..m.rows() {
            max = max.max(m.get(r, c));
        }
        let mut denom = 0.0;
        for r in 0..m.rows() {
            let e = (m.get(r, c) - max).max(-700.0).exp();
            out.set(r, c, e);
            denom += e;
        }
        for r in 0..m.rows() {
            out.set(r, c, out.get(r, c) / denom);
        }
    }
    out
}

/// Parameter ids for one LSTM cell, gate order i, f, C, o.
#[derive(Debug, Clone, Copy)]
pub struct LstmParamIds {
    pub w_i: ParamId,
    pub w_f: ParamId,
    pub w_c: ParamId,
    pub w_o: ParamId,
    pub b_i: ParamId,
    pub b_f: ParamId,
    pub b_c: ParamId,
    pub b_o: ParamId,
}

/// One LSTM step:
/// i, f, o = σ(W·[x, h_prev] + b); C̃ = tanh(W_C·[x, h_prev] + b_C);
/// c = f ⊙ c_prev + i ⊙ C̃; h = o ⊙ tanh(c). Returns (h, c).
pub fn lstm_cell(
    tape: &mut Tape,
    store: &ParamStore,
    p: &LstmParamIds,
    x: ValueId,
    h_prev: ValueId,
    c_prev: ValueId,
) -> Result<(ValueId, ValueId), NumericsError> {
    let z = tape.concat(&[x, h_prev])?;
    let i_lin = tape.dense(store, p.w_i, Some(p.b_i), z)?;
    let i_gate = tape.sigmoid(i_lin);
    let f_lin = tape.dense(store, p.w_f, Some(p.b_f), z)?;
    let f_gate = tape.sigmoid(f_lin);
    let c_lin = tape.dense(store, p.w_c, Some(p.b_c), z)?;
    let c_tilde = tape.tanh(c_lin);
    let o_lin = tape.dense(store, p.w_o, Some(p.b_o), z)?;
    let o_gate = tape.sigmoid(o_lin);
    let keep = tape.mul(f_gate, c_prev)?;
    let write = tape.mul(i_gate, c_tilde)?;
    let c = tape.add(keep, write)?;
    let c_act = tape.tanh(c);
    let h = tape.mul(o_gate, c_act)?;
    Ok((h, c))
}
