//! Character and word error rates over a small hand-written corpus.
//!
//! cargo run --release --example evaluate

use caltext::metrics::{cer, corpus_report, levenshtein, wer};

fn main() {
    let kitten: Vec<char> = "kitten".chars().collect();
    let sitting: Vec<char> = "sitting".chars().collect();
    println!("kitten -> sitting: {:?}", levenshtein(&kitten, &sitting));
    println!("CER(abcd, abxd) = {:?}", cer("abcd", "abxd"));
    println!("WER(the cat sat, the dog sat) = {:?}", wer("the cat sat", "the dog sat"));

    let lines = [
        ("l1", "ابت جدر", "ابت جدر"),
        ("l2", "سع فما", "سع فم"),
        ("l3", "بجس", "بجسس"),
        ("l4", "", "ا"),
    ];
    let report = corpus_report(lines.iter().map(|(id, t, o)| (id.to_string(), t.to_string(), o.to_string())))
        .expect("corpus has non-empty targets");
    print!("{}", report.to_tsv());
    println!(
        "CER {:.2}  WER {:.2}  char accuracy {:.2}  word accuracy {:.2}",
        report.cer,
        report.wer,
        report.char_accuracy(),
        report.word_accuracy()
    );
}
