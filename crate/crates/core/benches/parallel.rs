//! Sequential vs rayon paths for the data-parallel hot loops.
//! Without the `parallel` feature both arms run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use medrag_core::corpus::ingest;
use medrag_core::index::normalize;
use medrag_core::par::Exec;
use medrag_core::providers::MockEmbedder;
use medrag_core::retrieval::IndexSet;
use medrag_core::tokenize::WordPunctTokenizer;
use medrag_core::{ChunkingParams, DenseIndex, RawDocument};

const WORDS: [&str; 12] = [
    "artery", "renal", "insulin", "cortex", "fever", "lesion", "dose", "acute", "valve", "sepsis",
    "node", "tumour",
];

fn text(rng: &mut ChaCha8Rng, sentences: usize) -> String {
    (0..sentences)
        .map(|_| {
            let n = rng.random_range(6..20);
            let body: Vec<&str> = (0..n)
                .map(|_| WORDS[rng.random_range(0..WORDS.len())])
                .collect();
            format!("The {}.", body.join(" "))
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn corpus(books: usize) -> Vec<RawDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..books)
        .map(|b| {
            let mut body = String::new();
            for c in 0..4 {
                body.push_str(&format!("CHAPTER {}\n\n", c + 1));
                for s in 0..5 {
                    body.push_str(&format!("{}.{} Section heading {s}\n\n", c + 1, s + 1));
                    for _ in 0..4 {
                        body.push_str(&text(&mut rng, 6));
                        body.push_str("\n\n");
                    }
                }
            }
            RawDocument {
                book_name: format!("book{b}"),
                body,
            }
        })
        .collect()
}

const ARMS: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn bench(c: &mut Criterion) {
    let docs = corpus(12);
    let params = ChunkingParams {
        max_tokens: 96,
        min_paragraph_tokens: 8,
        min_chunk_tokens: 24,
    };
    let chunks = ingest(&docs, &params, &WordPunctTokenizer, Exec::Sequential).unwrap();
    let embedder = MockEmbedder::with_dim("bench", 256);

    let mut g = c.benchmark_group("ingest");
    for (name, exec) in ARMS {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| ingest(&docs, &params, &WordPunctTokenizer, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("index_build");
    g.sample_size(20);
    for (name, exec) in ARMS {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| IndexSet::build(&chunks, &embedder, true, true, exec).unwrap())
        });
    }
    g.finish();

    // widen the dense matrix so the scan dominates
    let many: Vec<_> = (0..8)
        .flat_map(|r| {
            chunks.iter().map(move |ch| {
                let mut ch = ch.clone();
                ch.chunk_id = format!("{}~{r}", ch.chunk_id);
                ch
            })
        })
        .collect();
    let dense = DenseIndex::build(&many, &embedder, Exec::default()).unwrap();
    let q = normalize(&embedder.vector("renal artery insulin valve")).unwrap();
    let mut g = c.benchmark_group("dense_search");
    for (name, exec) in ARMS {
        g.bench_function(BenchmarkId::new(name, dense.len()), |b| {
            b.iter(|| dense.search_with(&q, 50, None, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
