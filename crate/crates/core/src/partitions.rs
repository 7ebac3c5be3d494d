//! Enumeration of set partitions and perfect matchings.
//!
//! Partitions are represented as lists of blocks; each block is a sorted list
//! of element indices, and blocks are ordered by their smallest element.

pub type Partition = Vec<Vec<usize>>;

/// All set partitions of `{0, .., n-1}`, generated from restricted growth strings.
pub fn set_partitions(n: usize) -> Vec<Partition> {
    let mut out = Vec::new();
    if n == 0 {
        out.push(Vec::new());
        return out;
    }
    let mut rgs = vec![0usize; n];
    loop {
        let blocks = rgs.iter().max().map_or(0, |m| m + 1);
        let mut p: Partition = vec![Vec::new(); blocks];
        for (i, &b) in rgs.iter().enumerate() {
            p[b].push(i);
        }
        out.push(p);
        // Advance to the next restricted growth string.
        let mut i = n - 1;
        loop {
            if i == 0 {
                return out;
            }
            let prefix_max = rgs[..i].iter().copied().max().unwrap_or(0);
            if rgs[i] <= prefix_max {
                rgs[i] += 1;
                for r in rgs.iter_mut().skip(i + 1) {
                    *r = 0;
                }
                break;
            }
            i -= 1;
        }
    }
}

/// Partitions of `{0, .., n-1}` whose blocks all have at least two elements.
pub fn singleton_free_partitions(n: usize) -> Vec<Partition> {
    set_partitions(n)
        .into_iter()
        .filter(|p| p.iter().all(|b| b.len() >= 2))
        .collect()
}

/// All perfect matchings of `{0, .., n-1}`; empty when `n` is odd.
pub fn pairings(n: usize) -> Vec<Vec<(usize, usize)>> {
    fn rec(rest: &[usize], acc: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if rest.is_empty() {
            out.push(acc.clone());
            return;
        }
        let first = rest[0];
        for j in 1..rest.len() {
            acc.push((first, rest[j]));
            let remaining: Vec<usize> = rest[1..]
                .iter()
                .copied()
                .enumerate()
                .filter(|&(k, _)| k + 1 != j)
                .map(|(_, v)| v)
                .collect();
            rec(&remaining, acc, out);
            acc.pop();
        }
    }
    let mut out = Vec::new();
    if n % 2 == 1 {
        return out;
    }
    let all: Vec<usize> = (0..n).collect();
    rec(&all, &mut Vec::new(), &mut out);
    out
}

/// Möbius coefficient `(m - 1)! (-1)^{m - 1}` of a partition with `m` blocks.
pub fn mobius_coefficient(blocks: usize) -> f64 {
    let mut f = 1.0;
    for k in 1..blocks {
        f *= k as f64;
    }
    if blocks % 2 == 0 {
        -f
    } else {
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bell_numbers() {
        let bell = [1, 1, 2, 5, 15, 52, 203, 877, 4140];
        for (n, &b) in bell.iter().enumerate() {
            assert_eq!(set_partitions(n).len(), b, "n={n}");
        }
    }

    #[test]
    fn partitions_are_exact_covers() {
        for p in set_partitions(6) {
            let mut seen: Vec<usize> = p.iter().flatten().copied().collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..6).collect::<Vec<_>>());
        }
    }

    #[test]
    fn pairing_counts_are_double_factorials() {
        assert_eq!(pairings(2).len(), 1);
        assert_eq!(pairings(4).len(), 3);
        assert_eq!(pairings(6).len(), 15);
        assert_eq!(pairings(8).len(), 105);
        assert!(pairings(3).is_empty());
    }

    #[test]
    fn singleton_free_partitions_of_four() {
        let p = singleton_free_partitions(4);
        assert_eq!(p.len(), 4);
        assert!(p.contains(&vec![vec![0, 1, 2, 3]]));
        assert!(p.contains(&vec![vec![0, 1], vec![2, 3]]));
        assert!(p.contains(&vec![vec![0, 2], vec![1, 3]]));
        assert!(p.contains(&vec![vec![0, 3], vec![1, 2]]));
    }

    #[test]
    fn mobius_values() {
        assert_eq!(mobius_coefficient(1), 1.0);
        assert_eq!(mobius_coefficient(2), -1.0);
        assert_eq!(mobius_coefficient(3), 2.0);
        assert_eq!(mobius_coefficient(4), -6.0);
    }
}
