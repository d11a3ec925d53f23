use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// N-ary labeled constituency tree. Leaves carry a POS tag and a word.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tree {
    Leaf { tag: String, word: String },
    Node { label: String, children: Vec<Tree> },
}

/// Binarized tree; internal nodes carry their height (leaves have height 1).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryTree {
    Leaf {
        tag: String,
        word: String,
    },
    Node {
        label: String,
        height: u32,
        left: Box<BinaryTree>,
        right: Box<BinaryTree>,
    },
}

impl Tree {
    pub fn leaf(tag: impl Into<String>, word: impl Into<String>) -> Tree {
        Tree::Leaf {
            tag: tag.into(),
            word: word.into(),
        }
    }

    pub fn node(label: impl Into<String>, children: Vec<Tree>) -> Tree {
        assert!(!children.is_empty(), "internal node needs children");
        Tree::Node {
            label: label.into(),
            children,
        }
    }

    pub fn label(&self) -> &str {
        match self {
            Tree::Leaf { tag, .. } => tag,
            Tree::Node { label, .. } => label,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Tree::Leaf { .. })
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            Tree::Leaf { .. } => 1,
            Tree::Node { children, .. } => children.iter().map(Tree::n_leaves).sum(),
        }
    }

    /// Words in left-to-right order.
    pub fn words(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut |_, word| out.push(word));
        out
    }

    /// `(tag, word)` pairs in left-to-right order.
    pub fn tagged_words(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::new();
        self.collect_leaves(&mut |tag, word| out.push((tag, word)));
        out
    }

    fn collect_leaves<'a>(&'a self, f: &mut impl FnMut(&'a str, &'a str)) {
        match self {
            Tree::Leaf { tag, word } => f(tag, word),
            Tree::Node { children, .. } => {
                for c in children {
                    c.collect_leaves(f);
                }
            }
        }
    }

    /// Replaces leaf words in order; `words` must have `n_leaves()` entries.
    pub fn with_words(&self, words: &[String]) -> Tree {
        fn go(t: &Tree, words: &[String], pos: &mut usize) -> Tree {
            match t {
                Tree::Leaf { tag, .. } => {
                    let w = words[*pos].clone();
                    *pos += 1;
                    Tree::leaf(tag.clone(), w)
                }
                Tree::Node { label, children } => Tree::Node {
                    label: label.clone(),
                    children: children.iter().map(|c| go(c, words, pos)).collect(),
                },
            }
        }
        assert_eq!(words.len(), self.n_leaves());
        go(self, words, &mut 0)
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            Tree::Leaf { .. } => 0,
            Tree::Node { children, .. } => 1 + children.iter().map(Tree::depth).max().unwrap_or(0),
        }
    }

    /// Bracketed notation, e.g. `(S (NP (DT the) (NN cat)) (VP (VBD sat)))`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        self.render_into(&mut s);
        s
    }

    fn render_into(&self, s: &mut String) {
        match self {
            Tree::Leaf { tag, word } => {
                s.push('(');
                s.push_str(tag);
                s.push(' ');
                s.push_str(word);
                s.push(')');
            }
            Tree::Node { label, children } => {
                s.push('(');
                s.push_str(label);
                for c in children {
                    s.push(' ');
                    c.render_into(s);
                }
                s.push(')');
            }
        }
    }

    /// Structure only, words without tags: `(the (cat sat))`.
    pub fn render_words(&self) -> String {
        match self {
            Tree::Leaf { word, .. } => word.clone(),
            Tree::Node { children, .. } => {
                let inner: Vec<String> = children.iter().map(Tree::render_words).collect();
                format!("({})", inner.join(" "))
            }
        }
    }
}

impl BinaryTree {
    pub fn leaf(tag: impl Into<String>, word: impl Into<String>) -> BinaryTree {
        BinaryTree::Leaf {
            tag: tag.into(),
            word: word.into(),
        }
    }

    /// Internal node with its height set from the children.
    pub fn join(label: impl Into<String>, left: BinaryTree, right: BinaryTree) -> BinaryTree {
        let height = left.height().max(right.height()) + 1;
        BinaryTree::Node {
            label: label.into(),
            height,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn height(&self) -> u32 {
        match self {
            BinaryTree::Leaf { .. } => 1,
            BinaryTree::Node { height, .. } => *height,
        }
    }

    pub fn label(&self) -> &str {
        match self {
            BinaryTree::Leaf { tag, .. } => tag,
            BinaryTree::Node { label, .. } => label,
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            BinaryTree::Leaf { .. } => 1,
            BinaryTree::Node { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub fn words(&self) -> Vec<&str> {
        match self {
            BinaryTree::Leaf { word, .. } => vec![word.as_str()],
            BinaryTree::Node { left, right, .. } => {
                let mut w = left.words();
                w.extend(right.words());
                w
            }
        }
    }

    /// Recomputes every height bottom-up.
    pub fn recompute_heights(&mut self) -> u32 {
        match self {
            BinaryTree::Leaf { .. } => 1,
            BinaryTree::Node {
                height,
                left,
                right,
                ..
            } => {
                *height = left.recompute_heights().max(right.recompute_heights()) + 1;
                *height
            }
        }
    }

    /// Same shape ignoring labels, words and heights.
    pub fn same_shape(&self, other: &BinaryTree) -> bool {
        match (self, other) {
            (BinaryTree::Leaf { .. }, BinaryTree::Leaf { .. }) => true,
            (
                BinaryTree::Node {
                    left: l1,
                    right: r1,
                    ..
                },
                BinaryTree::Node {
                    left: l2,
                    right: r2,
                    ..
                },
            ) => l1.same_shape(l2) && r1.same_shape(r2),
            _ => false,
        }
    }

    pub fn to_tree(&self) -> Tree {
        match self {
            BinaryTree::Leaf { tag, word } => Tree::leaf(tag.clone(), word.clone()),
            BinaryTree::Node {
                label, left, right, ..
            } => Tree::node(label.clone(), vec![left.to_tree(), right.to_tree()]),
        }
    }

    /// Converts a tree whose internal nodes all have exactly two children.
    pub fn from_tree(tree: &Tree) -> Result<BinaryTree> {
        match tree {
            Tree::Leaf { tag, word } => Ok(BinaryTree::leaf(tag.clone(), word.clone())),
            Tree::Node { label, children } if children.len() == 2 => Ok(BinaryTree::join(
                label.clone(),
                BinaryTree::from_tree(&children[0])?,
                BinaryTree::from_tree(&children[1])?,
            )),
            Tree::Node { children, .. } => Err(Error::Data(format!(
                "node with {} children is not binary",
                children.len()
            ))),
        }
    }

    pub fn render(&self) -> String {
        self.to_tree().render()
    }

    pub fn render_words(&self) -> String {
        self.to_tree().render_words()
    }
}
