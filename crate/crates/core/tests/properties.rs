use std::collections::BTreeSet;

use assertlora::data::{self, split, ExamplePair, SplitSizes, Vocab};
use assertlora::metrics::{self, lcs_length, rouge_l, rouge_n};
use assertlora::numerics::Matrix;
use assertlora::sva::{self, canonicalize, join_tokens, lex};
use proptest::prelude::*;

fn naive_lcs(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (Some((x, ra)), Some((y, rb))) => {
            if x == y {
                1 + naive_lcs(ra, rb)
            } else {
                naive_lcs(ra, b).max(naive_lcs(a, rb))
            }
        }
        _ => 0,
    }
}

fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "##1", "|->", "("]), 0..10)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

const SVA_ATOMS: &[&str] = &[
    "clk", "rst_n", "req", "ack", "8'hFF", "3", "##2", "##[1:4]", "|->", "|=>", "&&", "!", "(", ")", "[*2]",
    "@(posedge", "disable", "iff", "$rose(a)", "$past(q,1)", "==", ";", "\"s\"",
];

fn assertion(name: String, body: Vec<&'static str>) -> String {
    format!("property {name};\n  @(posedge clk) {};\nendproperty\nassert property({name});", body.join(" "))
}

proptest! {
    #[test]
    fn matmul_matches_naive_bitwise((m, k, n) in (1usize..11, 1usize..9, 1usize..13), seed in any::<u64>()) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let a = Matrix::uniform(m, k, 1.0, &mut rng);
        let b = Matrix::uniform(k, n, 1.0, &mut rng);
        prop_assert_eq!(a.matmul(&b).unwrap(), naive_matmul(&a, &b));
        prop_assert_eq!(a.matmul_t(&b.transpose()).unwrap(), naive_matmul(&a, &b));
    }

    #[test]
    fn transpose_is_an_involution(a in matrix(3, 5)) {
        prop_assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn lcs_matches_recursion(a in prop::collection::vec(0u8..4, 0..9), b in prop::collection::vec(0u8..4, 0..9)) {
        prop_assert_eq!(lcs_length(&a, &b), naive_lcs(&a, &b));
        prop_assert_eq!(lcs_length(&a, &b), lcs_length(&b, &a));
    }

    #[test]
    fn metric_ranges(c in words(), r in words()) {
        for v in [metrics::bleu(&c, &r, 4), rouge_n(&c, &r, 1), rouge_n(&c, &r, 2), rouge_l(&c, &r, 1.0).f] {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
        prop_assert_eq!(rouge_l(&c, &r, 1.0).f, rouge_l(&r, &c, 1.0).f);
        if !c.is_empty() {
            prop_assert!((metrics::bleu(&c, &c, 4) - 1.0).abs() < 1e-12);
            prop_assert_eq!(rouge_l(&c, &c, 1.0).f, 1.0);
        }
    }

    #[test]
    fn lexer_round_trip(atoms in prop::collection::vec(prop::sample::select(SVA_ATOMS), 1..20)) {
        let text = atoms.join(" ");
        let tokens = lex(&text).unwrap();
        let again = lex(&join_tokens(&tokens)).unwrap();
        let key = |t: &[sva::SvaToken]| t.iter().map(|t| (t.kind, t.text.clone())).collect::<Vec<_>>();
        prop_assert_eq!(key(&tokens), key(&again));
    }

    #[test]
    fn canonicalization_is_idempotent_and_name_blind(
        body in prop::collection::vec(prop::sample::select(&SVA_ATOMS[..15]), 1..12),
        a in "p_[a-z]{1,6}",
        b in "q_[a-z]{1,6}",
    ) {
        let one = canonicalize(&assertion(a.clone(), body.clone())).unwrap();
        let two = canonicalize(&assertion(b, body.clone())).unwrap();
        prop_assert_eq!(&one, &two);
        prop_assert_eq!(&canonicalize(&one.text()).unwrap(), &one);
        prop_assert_eq!(one.renames.len(), 1);
        prop_assert_eq!(&one.renames[0].0, &a);
        let pred = assertion(a, body.clone());
        let reference = assertion("other".into(), body);
        prop_assert_eq!(metrics::accuracy(&[pred.as_str()], &[reference.as_str()]).unwrap(), 1.0);
    }

    #[test]
    fn split_is_a_partition(n in 20usize..200, seed in any::<u64>()) {
        let pairs: Vec<ExamplePair> = (0..n).map(|i| ExamplePair::new(format!("q{i}"), format!("a{i}"))).collect();
        let s = split(&pairs, seed, SplitSizes::DEFAULT_PROPORTIONS).unwrap();
        prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), n);
        let all: BTreeSet<&str> = s.train.iter().chain(&s.validation).chain(&s.test).map(|p| p.question.as_str()).collect();
        prop_assert_eq!(all.len(), n);
    }

    #[test]
    fn vocab_round_trip(text in "[ -~\n]{0,80}") {
        let v = Vocab::default();
        let (ids, unknown) = v.encode(&text);
        prop_assert_eq!(unknown, 0);
        prop_assert_eq!(v.decode(&ids), text);
    }

    #[test]
    fn prompt_encoding_round_trip(q in "[ -~\n]{0,60}", a in "[ -~]{1,40}") {
        let v = Vocab::default();
        let pair = ExamplePair::new(q.clone(), a.clone());
        let e = data::encode_prompt(&pair, &v, 512).unwrap();
        prop_assert_eq!(e.tokens.len(), e.mask.len());
        prop_assert_eq!(data::decode(&e.tokens, &v), (q, a.clone()));
        prop_assert_eq!(e.mask.iter().filter(|&&m| m).count(), a.chars().count() + 1);
    }
}

#[test]
fn toy_corpus_is_valid_and_reproducible() {
    let a = data::gen_toy_corpus(200, 5);
    assert_eq!(a, data::gen_toy_corpus(200, 5));
    assert_ne!(a, data::gen_toy_corpus(200, 6));
    for p in &a {
        sva::validate_syntax(&p.answer).unwrap_or_else(|d| panic!("{:?}\n{}", d, p.answer));
        assert!(canonicalize(&p.answer).is_ok());
        assert!(p.answer.len() + 2 <= 257);
    }
}
