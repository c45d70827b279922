//! Seeded synthetic corpus: plausible function skeletons in all seven
//! languages, with a planted sink call in every vulnerable sample and a safe
//! counterpart in every clean one.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CodeSample, Language};

const NAMES: &[&str] = &[
    "handle", "process", "load", "parse", "update", "render", "fetch", "store", "apply", "build",
];
const VARS: &[&str] = &["buf", "data", "input", "value", "item", "count", "name", "path", "result", "temp"];

struct Template {
    header: fn(&str) -> String,
    footer: &'static str,
    fillers: &'static [&'static str],
    comment: &'static str,
    vulnerable: &'static [&'static str],
    safe: &'static [&'static str],
    sinks: &'static [&'static str],
}

fn template(lang: Language) -> Template {
    match lang {
        Language::C => Template {
            header: |n| format!("int {n}(char *input, int len) {{\n    char buf[64];\n"),
            footer: "    return 0;\n}\n",
            fillers: &["    int {v} = len * {k};\n", "    if ({v} > {k}) {{ return -1; }}\n", "    {v} += {k};\n"],
            comment: "    /* {v} bookkeeping */\n",
            vulnerable: &["    strcpy(buf, input);\n", "    sprintf(buf, input);\n", "    gets(buf);\n"],
            safe: &[
                "    strncpy(buf, input, sizeof(buf) - 1);\n",
                "    snprintf(buf, sizeof(buf), \"%s\", input);\n",
                "    fgets(buf, sizeof(buf), stdin);\n",
            ],
            sinks: &["strcpy", "sprintf", "gets"],
        },
        Language::Cpp => Template {
            header: |n| format!("void {n}(const std::string& src, size_t len) {{\n    std::vector<char> dst(64);\n"),
            footer: "}\n",
            fillers: &["    auto {v} = len + {k};\n", "    if ({v} == {k}) {{ return; }}\n", "    std::size_t {v} = dst.size() / {k};\n"],
            comment: "    // {v} bookkeeping\n",
            vulnerable: &["    strcpy(dst.data(), src.c_str());\n", "    memcpy(dst.data(), src.data(), len);\n"],
            safe: &["    std::copy_n(src.begin(), std::min(len, dst.size()), dst.begin());\n", "    dst.assign(src.begin(), src.end());\n"],
            sinks: &["strcpy", "memcpy"],
        },
        Language::CSharp => Template {
            header: |n| format!("public void {n}(byte[] src, int len)\n{{\n    var dst = new byte[64];\n"),
            footer: "}\n",
            fillers: &["    var {v} = len * {k};\n", "    if ({v} > {k}) {{ return; }}\n", "    int {v} = dst.Length - {k};\n"],
            comment: "    // {v} bookkeeping\n",
            vulnerable: &["    Buffer.BlockCopy(src, 0, dst, 0, len);\n", "    Process.Start(Encoding.UTF8.GetString(src));\n"],
            safe: &["    src.AsSpan(0, Math.Min(len, dst.Length)).CopyTo(dst);\n", "    Array.Resize(ref dst, Math.Min(len, 64));\n"],
            sinks: &["BlockCopy", "Start"],
        },
        Language::Go => Template {
            header: |n| format!("func {n}(src []byte, n int) error {{\n    dst := make([]byte, 64)\n"),
            footer: "    return nil\n}\n",
            fillers: &["    {v} := n * {k}\n", "    if {v} > {k} {{\n        return nil\n    }}\n", "    {v} := len(dst) - {k}\n"],
            comment: "    // {v} bookkeeping\n",
            vulnerable: &[
                "    p := (*[64]byte)(unsafe.Pointer(&src[0]))\n",
                "    exec.Command(\"sh\", \"-c\", string(src)).Run()\n",
            ],
            safe: &["    copy(dst, src[:min(n, len(dst))])\n", "    exec.Command(\"ls\", filepath.Clean(string(src))).Run()\n"],
            sinks: &["unsafe", "sh"],
        },
        Language::Java => Template {
            header: |n| format!("public void {n}(String input, int len) throws Exception {{\n    StringBuilder sb = new StringBuilder();\n"),
            footer: "}\n",
            fillers: &["    int {v} = len * {k};\n", "    if ({v} > {k}) {{ return; }}\n", "    sb.append({k});\n"],
            comment: "    // {v} bookkeeping\n",
            vulnerable: &[
                "    Runtime.getRuntime().exec(input);\n",
                "    stmt.executeQuery(\"SELECT * FROM t WHERE id=\" + input);\n",
            ],
            safe: &[
                "    new ProcessBuilder(\"ls\", input).start();\n",
                "    ps.setString(1, input);\n",
            ],
            sinks: &["exec", "executeQuery"],
        },
        Language::JavaScript => Template {
            header: |n| format!("function {n}(input, el) {{\n    const out = [];\n"),
            footer: "    return out;\n}\n",
            fillers: &["    let {v} = input.length * {k};\n", "    if ({v} > {k}) {{ return out; }}\n", "    out.push({k});\n"],
            comment: "    // {v} bookkeeping\n",
            vulnerable: &["    const r = eval(input);\n", "    el.innerHTML = input;\n"],
            safe: &["    const r = JSON.parse(input);\n", "    el.textContent = input;\n"],
            sinks: &["eval", "innerHTML"],
        },
        Language::Python => Template {
            header: |n| format!("def {n}(data, size):\n    \"\"\"Helper.\"\"\"\n    out = []\n"),
            footer: "    return out\n",
            fillers: &["    {v} = size * {k}\n", "    if {v} > {k}:\n        return out\n", "    out.append({k})\n"],
            comment: "    # {v} bookkeeping\n",
            vulnerable: &["    r = eval(data)\n", "    os.system(data)\n", "    r = pickle.loads(data)\n"],
            safe: &["    r = ast.literal_eval(data)\n", "    subprocess.run([\"ls\", data], check=True)\n", "    r = json.loads(data)\n"],
            sinks: &["eval", "system", "pickle"],
        },
    }
}

/// Identifier tokens that only occur in planted vulnerable statements.
pub fn sink_tokens(lang: Language) -> &'static [&'static str] {
    template(lang).sinks
}

fn fill(pattern: &str, var: &str, k: u32) -> String {
    pattern
        .replace("{v}", var)
        .replace("{k}", &format!("{k}"))
        .replace("{{", "{")
        .replace("}}", "}")
}

/// `n_per_language` samples per language; `round(n_per_language * vuln_rate)`
/// of each language are vulnerable.
pub fn generate_synthetic(n_per_language: usize, vuln_rate: f64, seed: u64) -> Vec<CodeSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_vuln = libm::round(n_per_language as f64 * vuln_rate) as usize;
    let mut out = Vec::with_capacity(n_per_language * Language::COUNT);
    for lang in Language::ALL {
        let t = template(lang);
        let mut labels: Vec<u8> = (0..n_per_language).map(|i| u8::from(i < n_vuln)).collect();
        labels.shuffle(&mut rng);
        for (i, &label) in labels.iter().enumerate() {
            let name = NAMES.choose(&mut rng).expect("non-empty");
            let mut code = (t.header)(name);
            let n_fill = rng.random_range(1..=3);
            let sink_at = rng.random_range(0..=n_fill);
            for j in 0..=n_fill {
                if j == sink_at {
                    let pool = if label == 1 { t.vulnerable } else { t.safe };
                    code.push_str(pool.choose(&mut rng).expect("non-empty"));
                }
                if j < n_fill {
                    let var = VARS.choose(&mut rng).expect("non-empty");
                    let pat = t.fillers.choose(&mut rng).expect("non-empty");
                    code.push_str(&fill(pat, var, rng.random_range(1..100)));
                }
            }
            if rng.random_bool(0.3) {
                let var = VARS.choose(&mut rng).expect("non-empty");
                code.push_str(&fill(t.comment, var, 0));
            }
            code.push_str(t.footer);
            let mut s = CodeSample::new(format!("syn-{}-{i:05}", lang.tag().to_ascii_lowercase()), lang, code, label);
            if label == 1 {
                s.cwe = Some(synthetic_cwe(lang).into());
            }
            out.push(s);
        }
    }
    out
}

fn synthetic_cwe(lang: Language) -> &'static str {
    match lang {
        Language::C | Language::Cpp | Language::CSharp => "CWE-787",
        Language::Go | Language::Java => "CWE-78",
        Language::JavaScript => "CWE-79",
        Language::Python => "CWE-94",
    }
}
