use crate::treebank::Tree;

struct Placed {
    level: usize,
    /// Child anchors and levels, for internal nodes.
    kids: Vec<(usize, usize)>,
}

fn place(t: &Tree, starts: &[usize], widths: &[usize], next: &mut usize, out: &mut Vec<Placed>) -> (usize, usize) {
    match t {
        Tree::Leaf { .. } => {
            let i = *next;
            *next += 1;
            (starts[i] + widths[i] / 2, 0)
        }
        Tree::Node { children, .. } => {
            let kids: Vec<(usize, usize)> = children.iter().map(|c| place(c, starts, widths, next, out)).collect();
            if kids.len() == 1 {
                return kids[0];
            }
            let level = 1 + kids.iter().map(|k| k.1).max().unwrap_or(0);
            let anchor = (kids[0].0 + kids[kids.len() - 1].0) / 2;
            out.push(Placed { level, kids });
            (anchor, level)
        }
    }
}

/// Draws a tree top-down over its words, one row per node level:
///
/// ```text
///  +-----+
///  |   +---+
/// the cat sat
/// ```
pub fn render_ascii(tree: &Tree) -> String {
    let words = tree.words();
    let widths: Vec<usize> = words.iter().map(|w| w.chars().count().max(1)).collect();
    let mut starts = Vec::with_capacity(words.len());
    let mut x = 0;
    for w in &widths {
        starts.push(x);
        x += w + 1;
    }
    let width = x.saturating_sub(1);
    let mut nodes = Vec::new();
    let (_, top) = place(tree, &starts, &widths, &mut 0, &mut nodes);
    let mut rows = Vec::new();
    for level in (1..=top).rev() {
        let mut line = vec![' '; width];
        for n in &nodes {
            if n.level == level {
                let (lo, hi) = (n.kids[0].0, n.kids[n.kids.len() - 1].0);
                for c in &mut line[lo..=hi] {
                    *c = '-';
                }
                for k in &n.kids {
                    line[k.0] = '+';
                }
            } else if n.level > level {
                // edges from this node's children pass through lower rows
                for k in &n.kids {
                    if k.1 < level {
                        line[k.0] = '|';
                    }
                }
            }
        }
        rows.push(line.into_iter().collect::<String>().trim_end().to_string());
    }
    rows.push(words.join(" "));
    rows.join("\n") + "\n"
}

/// Titled trees over the same sentence, one below the other.
pub fn render_stacked(trees: &[(&str, &Tree)]) -> String {
    let mut s = String::new();
    for (title, t) in trees {
        s.push_str(&format!("[{}]\n", title));
        s.push_str(&render_ascii(t));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::parse_bracketed;

    fn t(s: &str) -> Tree {
        parse_bracketed(s).unwrap().remove(0)
    }

    #[test]
    fn right_branching_three_words() {
        let r = render_ascii(&t("(S (D the) (N (N cat) (V sat)))"));
        assert_eq!(r, " +-----+\n |   +---+\nthe cat sat\n");
    }

    #[test]
    fn flat_node_and_single_word() {
        assert_eq!(render_ascii(&t("(S (A a) (B b) (C c))")), "+-+-+\na b c\n");
        assert_eq!(render_ascii(&t("(S (A a))")), "a\n");
    }

    #[test]
    fn stacked_titles() {
        let a = t("(S (A a) (B b))");
        let s = render_stacked(&[("syd", &a), ("gold", &a)]);
        assert_eq!(s, "[syd]\n+-+\na b\n[gold]\n+-+\na b\n");
    }
}
