//! Expression trees: the symbolic surrogates evolved by the search engine.
//!
//! A tree is built from constants, input variables and the four binary
//! operators `{+, -, *, pdiv}`. Division is protected so that evaluation is
//! total: any finite input maps to a finite output. Trees are immutable
//! after construction and cheap to clone.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::distr::uniform::SampleUniform;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::Error;

/// Denominators with magnitude at or below this guard are treated as zero
/// by protected division.
pub const PDIV_GUARD: f64 = 1e-6;

/// Binary operators of the function set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Add,
    Sub,
    Mul,
    /// Protected division: returns 1 when the denominator is within the guard band.
    Pdiv,
}

impl Op {
    pub const ALL: [Op; 4] = [Op::Add, Op::Sub, Op::Mul, Op::Pdiv];

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
            Op::Pdiv => "/",
        }
    }
}

/// A node of an expression tree. Function nodes are always binary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node<F> {
    Const(F),
    Var(usize),
    Fun(Op, Box<Node<F>>, Box<Node<F>>),
}

impl<F: Real> Node<F> {
    pub fn size(&self) -> usize {
        match self {
            Node::Const(_) | Node::Var(_) => 1,
            Node::Fun(_, l, r) => 1 + l.size() + r.size(),
        }
    }

    /// Depth with a lone leaf counting as 1.
    pub fn depth(&self) -> usize {
        match self {
            Node::Const(_) | Node::Var(_) => 1,
            Node::Fun(_, l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    fn max_var_index(&self) -> Option<usize> {
        match self {
            Node::Const(_) => None,
            Node::Var(i) => Some(*i),
            Node::Fun(_, l, r) => l.max_var_index().max(r.max_var_index()),
        }
    }

    fn collect_vars(&self, out: &mut BTreeSet<usize>) {
        match self {
            Node::Const(_) => {}
            Node::Var(i) => {
                out.insert(*i);
            }
            Node::Fun(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
        }
    }

    fn eval(&self, x: &[F]) -> F {
        match self {
            Node::Const(c) => *c,
            Node::Var(i) => x[*i],
            Node::Fun(op, l, r) => {
                let a = l.eval(x);
                let b = r.eval(x);
                match op {
                    Op::Add => a + b,
                    Op::Sub => a - b,
                    Op::Mul => a * b,
                    Op::Pdiv => protected_div(a, b),
                }
            }
        }
    }

    /// Immutable access to the `idx`-th node in preorder.
    pub fn subtree(&self, idx: usize) -> &Node<F> {
        fn walk<'a, F: Real>(node: &'a Node<F>, idx: usize, pos: &mut usize) -> Option<&'a Node<F>> {
            if *pos == idx {
                return Some(node);
            }
            *pos += 1;
            match node {
                Node::Const(_) | Node::Var(_) => None,
                Node::Fun(_, l, r) => walk(l, idx, pos).or_else(|| walk(r, idx, pos)),
            }
        }
        walk(self, idx, &mut 0).expect("subtree index within node count")
    }

    /// Mutable access to the `idx`-th node in preorder.
    pub fn subtree_mut(&mut self, idx: usize) -> &mut Node<F> {
        fn walk<'a, F: Real>(
            node: &'a mut Node<F>,
            idx: usize,
            pos: &mut usize,
        ) -> Option<&'a mut Node<F>> {
            if *pos == idx {
                return Some(node);
            }
            *pos += 1;
            match node {
                Node::Const(_) | Node::Var(_) => None,
                Node::Fun(_, l, r) => match walk(l, idx, pos) {
                    Some(n) => Some(n),
                    None => walk(r, idx, pos),
                },
            }
        }
        walk(self, idx, &mut 0).expect("subtree index within node count")
    }
}

/// `a / b`, except that denominators within the guard band yield 1 so the
/// result is always finite.
pub fn protected_div<F: Real>(a: F, b: F) -> F {
    if b.abs() > F::from_config(PDIV_GUARD) {
        a / b
    } else {
        F::one()
    }
}

/// Tree-construction method for random initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMethod {
    /// Every leaf sits at exactly the requested depth.
    Full,
    /// Leaves may appear earlier; internal levels pick a terminal with
    /// probability [`GROW_TERMINAL_PROB`].
    Grow,
}

/// Terminal probability at internal levels in `grow` mode.
pub const GROW_TERMINAL_PROB: f64 = 0.1;
/// Probability that a generated terminal is a variable rather than a constant.
pub const TERMINAL_VAR_PROB: f64 = 0.9;

/// A rooted expression tree over a fixed feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExprTree<F> {
    root: Node<F>,
    n_features: usize,
}

impl<F: Real> ExprTree<F> {
    /// Builds a tree, validating that every variable index is in range.
    pub fn new(root: Node<F>, n_features: usize) -> Result<Self, Error> {
        if let Some(max) = root.max_var_index() {
            if max >= n_features {
                return Err(Error::VariableOutOfRange {
                    index: max,
                    n_features,
                });
            }
        }
        Ok(Self { root, n_features })
    }

    pub fn constant(value: F, n_features: usize) -> Self {
        Self {
            root: Node::Const(value),
            n_features,
        }
    }

    pub fn variable(index: usize, n_features: usize) -> Result<Self, Error> {
        Self::new(Node::Var(index), n_features)
    }

    pub fn root(&self) -> &Node<F> {
        &self.root
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn size(&self) -> usize {
        self.root.size()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Indices of the variables that actually appear in the tree, ascending.
    pub fn variables(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.root.collect_vars(&mut out);
        out
    }

    /// Evaluates the tree at `x`. Total for finite inputs.
    pub fn eval(&self, x: &[F]) -> F {
        assert!(
            x.len() >= self.n_features,
            "input of length {} cannot cover {} features",
            x.len(),
            self.n_features
        );
        self.root.eval(x)
    }

    /// Replaces the subtree at preorder index `idx`, returning a new tree.
    pub fn with_replaced_subtree(&self, idx: usize, replacement: Node<F>) -> Self {
        let mut root = self.root.clone();
        *root.subtree_mut(idx) = replacement;
        Self {
            root,
            n_features: self.n_features,
        }
    }

    /// Exact symbolic partial derivative with respect to feature `var`.
    ///
    /// `pdiv` differentiates as ordinary division, so the derivative is not
    /// meaningful where the denominator falls inside the guard band.
    pub fn differentiate(&self, var: usize) -> Result<Self, Error> {
        if var >= self.n_features {
            return Err(Error::VariableOutOfRange {
                index: var,
                n_features: self.n_features,
            });
        }
        Ok(Self {
            root: derive(&self.root, var),
            n_features: self.n_features,
        })
    }

    /// Fully parenthesized infix rendering; constants use 3 decimal places.
    pub fn to_infix(&self, feature_names: Option<&[String]>) -> String {
        let mut out = String::new();
        render_infix(&self.root, feature_names, true, &mut out);
        out
    }

    /// Graphviz DOT rendering with one node per tree node and
    /// parent-to-child edges in left-to-right order.
    pub fn to_dot(&self, feature_names: Option<&[String]>) -> String {
        let mut body = String::new();
        let mut next_id = 0usize;
        render_dot(&self.root, feature_names, &mut next_id, &mut body);
        format!("digraph expr {{\n{body}}}\n")
    }

    /// Draws a random tree with the given method and depth limit.
    ///
    /// Terminals are variables with probability 0.9, otherwise constants
    /// drawn uniformly from `const_range`.
    pub fn random<R: Rng>(
        method: InitMethod,
        depth: usize,
        n_features: usize,
        const_range: (F, F),
        rng: &mut R,
    ) -> Self
    where
        F: SampleUniform,
    {
        assert!(depth >= 1, "tree depth must be at least 1");
        assert!(n_features >= 1, "need at least one feature");
        let root = random_node(method, depth, n_features, const_range, rng);
        Self { root, n_features }
    }
}

fn random_terminal<F, R>(n_features: usize, const_range: (F, F), rng: &mut R) -> Node<F>
where
    F: Real + SampleUniform,
    R: Rng,
{
    if rng.random_bool(TERMINAL_VAR_PROB) {
        Node::Var(rng.random_range(0..n_features))
    } else {
        Node::Const(rng.random_range(const_range.0..=const_range.1))
    }
}

fn random_node<F, R>(
    method: InitMethod,
    depth: usize,
    n_features: usize,
    const_range: (F, F),
    rng: &mut R,
) -> Node<F>
where
    F: Real + SampleUniform,
    R: Rng,
{
    let make_terminal = match method {
        _ if depth == 1 => true,
        InitMethod::Full => false,
        InitMethod::Grow => rng.random_bool(GROW_TERMINAL_PROB),
    };
    if make_terminal {
        random_terminal(n_features, const_range, rng)
    } else {
        let op = Op::ALL[rng.random_range(0..Op::ALL.len())];
        let l = random_node(method, depth - 1, n_features, const_range, rng);
        let r = random_node(method, depth - 1, n_features, const_range, rng);
        Node::Fun(op, Box::new(l), Box::new(r))
    }
}

fn is_zero<F: Real>(node: &Node<F>) -> bool {
    matches!(node, Node::Const(c) if *c == F::zero())
}

fn is_one<F: Real>(node: &Node<F>) -> bool {
    matches!(node, Node::Const(c) if *c == F::one())
}

// Folding constructors keep derivatives from exploding in size. They only
// collapse the identities 0+x, x-0, 0*x, 1*x and constant pairs; this is
// construction-time folding, not a general simplifier.
fn fold_add<F: Real>(l: Node<F>, r: Node<F>) -> Node<F> {
    if is_zero(&l) {
        return r;
    }
    if is_zero(&r) {
        return l;
    }
    if let (Node::Const(a), Node::Const(b)) = (&l, &r) {
        return Node::Const(*a + *b);
    }
    Node::Fun(Op::Add, Box::new(l), Box::new(r))
}

fn fold_sub<F: Real>(l: Node<F>, r: Node<F>) -> Node<F> {
    if is_zero(&r) {
        return l;
    }
    if let (Node::Const(a), Node::Const(b)) = (&l, &r) {
        return Node::Const(*a - *b);
    }
    Node::Fun(Op::Sub, Box::new(l), Box::new(r))
}

fn fold_mul<F: Real>(l: Node<F>, r: Node<F>) -> Node<F> {
    if is_zero(&l) || is_zero(&r) {
        return Node::Const(F::zero());
    }
    if is_one(&l) {
        return r;
    }
    if is_one(&r) {
        return l;
    }
    if let (Node::Const(a), Node::Const(b)) = (&l, &r) {
        return Node::Const(*a * *b);
    }
    Node::Fun(Op::Mul, Box::new(l), Box::new(r))
}

fn fold_pdiv<F: Real>(l: Node<F>, r: Node<F>) -> Node<F> {
    if is_zero(&l) {
        return Node::Const(F::zero());
    }
    if is_one(&r) {
        return l;
    }
    Node::Fun(Op::Pdiv, Box::new(l), Box::new(r))
}

fn derive<F: Real>(node: &Node<F>, var: usize) -> Node<F> {
    match node {
        Node::Const(_) => Node::Const(F::zero()),
        Node::Var(i) => {
            if *i == var {
                Node::Const(F::one())
            } else {
                Node::Const(F::zero())
            }
        }
        Node::Fun(op, l, r) => {
            let dl = derive(l, var);
            let dr = derive(r, var);
            match op {
                Op::Add => fold_add(dl, dr),
                Op::Sub => fold_sub(dl, dr),
                Op::Mul => fold_add(
                    fold_mul(dl, (**r).clone()),
                    fold_mul((**l).clone(), dr),
                ),
                // Ordinary quotient rule; see the note on `differentiate`.
                Op::Pdiv => fold_pdiv(
                    fold_sub(
                        fold_mul(dl, (**r).clone()),
                        fold_mul((**l).clone(), dr),
                    ),
                    fold_mul((**r).clone(), (**r).clone()),
                ),
            }
        }
    }
}

fn var_label<F: Real>(index: usize, feature_names: Option<&[String]>) -> String {
    match feature_names.and_then(|names| names.get(index)) {
        Some(name) => name.clone(),
        None => format!("x{index}"),
    }
}

fn render_infix<F: Real>(
    node: &Node<F>,
    feature_names: Option<&[String]>,
    top: bool,
    out: &mut String,
) {
    match node {
        Node::Const(c) => {
            // Negative constants get their own parentheses as operands,
            // matching renderings like "(x0 - (-9.558))".
            if !top && *c < F::zero() {
                let _ = write!(out, "({:.3})", c);
            } else {
                let _ = write!(out, "{:.3}", c);
            }
        }
        Node::Var(i) => out.push_str(&var_label::<F>(*i, feature_names)),
        Node::Fun(op, l, r) => {
            out.push('(');
            render_infix(l, feature_names, false, out);
            let _ = write!(out, " {} ", op.symbol());
            render_infix(r, feature_names, false, out);
            out.push(')');
        }
    }
}

fn render_dot<F: Real>(
    node: &Node<F>,
    feature_names: Option<&[String]>,
    next_id: &mut usize,
    body: &mut String,
) -> usize {
    let id = *next_id;
    *next_id += 1;
    let label = match node {
        Node::Const(c) => format!("{:.3}", c),
        Node::Var(i) => var_label::<F>(*i, feature_names),
        Node::Fun(op, _, _) => op.symbol().to_string(),
    };
    let _ = writeln!(body, "  n{id} [label=\"{label}\"];");
    if let Node::Fun(_, l, r) = node {
        let lid = render_dot(l, feature_names, next_id, body);
        let _ = writeln!(body, "  n{id} -> n{lid};");
        let rid = render_dot(r, feature_names, next_id, body);
        let _ = writeln!(body, "  n{id} -> n{rid};");
    }
    id
}
