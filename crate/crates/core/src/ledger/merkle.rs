use super::Digest;

/// Root of the empty list: `H("")`.
pub fn empty_root() -> Digest {
    Digest::of(&[])
}

/// Binary Merkle root over leaf hashes, duplicating the last node of odd levels.
pub fn merkle_root(leaves: &[Digest]) -> Digest {
    if leaves.is_empty() {
        return empty_root();
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        if level.len() % 2 == 1 {
            level.push(*level.last().unwrap());
        }
        level = level.chunks(2).map(|p| Digest::of_parts(&[p[0].as_bytes(), p[1].as_bytes()])).collect();
    }
    level[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_trees_by_hand() {
        let a = Digest::of(b"a");
        let b = Digest::of(b"b");
        let c = Digest::of(b"c");
        assert_eq!(merkle_root(&[]), Digest::of(b""));
        assert_eq!(merkle_root(&[a]), a);
        let ab = Digest::of_parts(&[&a.0, &b.0]);
        assert_eq!(merkle_root(&[a, b]), ab);
        let cc = Digest::of_parts(&[&c.0, &c.0]);
        assert_eq!(merkle_root(&[a, b, c]), Digest::of_parts(&[&ab.0, &cc.0]));
    }

    #[test]
    fn order_matters() {
        let a = Digest::of(b"a");
        let b = Digest::of(b"b");
        assert_ne!(merkle_root(&[a, b]), merkle_root(&[b, a]));
    }
}
