//! Config files: defaults, a round trip through text and the errors that
//! name the offending key.

use dynamic_tta::harness::RunConfig;

fn main() {
    let cfg = RunConfig::default();
    let text = cfg.to_text();
    print!("{text}");
    assert_eq!(RunConfig::parse(&text).unwrap(), cfg);

    let edited = text.replace("retrieval_size = 12", "retrieval_size = 32");
    println!("edited retrieval size: {}", RunConfig::parse(&edited).unwrap().retrieval_size);

    for bad in [
        text.replace("alpha = 0.05", "alpha = fast"),
        format!("{text}warmup = 3\n"),
        text.replace("method = dltta", "method = tent"),
    ] {
        println!("rejected: {}", RunConfig::parse(&bad).unwrap_err());
    }
}
