#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <string>

#include "gatescope/jsonl.hpp"
#include "gatescope/probe.hpp"
#include "gatescope/stats.hpp"
#include "gatescope/text.hpp"
#include "gatescope/tokenizer.hpp"

namespace fs = std::filesystem;
using namespace gatescope;

namespace {

fs::path tmp_dir() {
    const fs::path p = fs::path(GATESCOPE_TEST_TMP);
    fs::create_directories(p);
    return p;
}

fs::path data_dir() { return fs::path(GATESCOPE_DATA_DIR); }

Probe make_probe(AnswerRule rule, const std::string& ref) {
    Probe p;
    p.id = "t";
    p.domain = Domain::factual;
    p.question_text = "q";
    p.reference_answer = ref;
    p.answer_rule = rule;
    return p;
}

}  // namespace

TEST_CASE("normalize_text folds case, punctuation, diacritics", "[text]") {
    CHECK(normalize_text("The Answer is Mount Rainier.") == "the answer is mount rainier");
    CHECK(normalize_text("Gabriel García Márquez") == "gabriel garcia marquez");
    CHECK(normalize_text("a--b,,  c!!") == "a b c");
    CHECK(normalize_text("   ") == "");
    CHECK(normalize_text("Škoda") == "skoda");
}

TEST_CASE("contains_normalized rejects empty needles", "[text]") {
    CHECK(contains_normalized("reply text", "TEXT"));
    CHECK_FALSE(contains_normalized("reply text", ""));
    CHECK_FALSE(contains_normalized("reply text", "!!!"));
}

TEST_CASE("approximate token counter", "[tokenizer]") {
    const auto& c = default_token_counter();
    CHECK(c.count("") == 0);
    CHECK(c.count("hello world") == 2);
    CHECK(c.count("hello, world!") == 4);
    CHECK(c.count("a1b2") == 1);
    CHECK(c.count("{\"k\":1}") == 7);
}

TEST_CASE("message token envelope", "[tokenizer]") {
    MessageList msgs{{"user", "hi"}};
    CHECK(message_tokens(msgs) == 2 + 4 + 1);
    msgs.push_back({"assistant", "one two three"});
    CHECK(message_tokens(msgs) == 2 + 4 + 1 + 4 + 3);
    CHECK(message_tokens({}) == 2);
}

TEST_CASE("basic statistics oracles", "[stats]") {
    const std::vector<double> v{1.0, 2.0, 3.0};
    CHECK(mean_of(v) == Catch::Approx(2.0));
    CHECK(stddev_sample(v) == Catch::Approx(1.0));
    CHECK(percentile(v, 0.5) == Catch::Approx(2.0));
    CHECK(variance_population({4.0, 8.0}) == Catch::Approx(4.0));
    CHECK(stddev_sample({7.5}) == 0.0);
    CHECK_THROWS_AS(mean_of({}), Error);
}

TEST_CASE("percentile linear interpolation", "[stats]") {
    const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
    CHECK(percentile(v, 0.5) == Catch::Approx(2.5));
    CHECK(percentile(v, 0.9) == Catch::Approx(3.7));
    CHECK(percentile(v, 0.0) == Catch::Approx(1.0));
    CHECK(percentile(v, 1.0) == Catch::Approx(4.0));
}

TEST_CASE("jsonl round trip and line flushing", "[jsonl]") {
    const fs::path path = tmp_dir() / "roundtrip.jsonl";
    fs::remove(path);
    {
        JsonlWriter w(path.string());
        w.write({{"a", 1}});
        w.write({{"b", "x"}});
        CHECK(w.count() == 2);
    }
    {
        JsonlWriter w(path.string());  // append mode keeps existing lines
        w.write({{"c", true}});
    }
    const auto rows = read_jsonl(path.string());
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].at("a") == 1);
    CHECK(rows[2].at("c") == true);
}

TEST_CASE("jsonl malformed line reports its number", "[jsonl]") {
    const fs::path path = tmp_dir() / "bad.jsonl";
    write_file(path.string(), "{\"ok\":1}\nnot json\n");
    try {
        read_jsonl(path.string());
        FAIL("expected parse error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
}

TEST_CASE("sample suite loads with resolved rules", "[probe]") {
    const ProbeSuite suite = load_suite((data_dir() / "suite.sample.json").string());
    CHECK(suite.probes.size() == 16);
    const auto counts = suite.domain_counts();
    CHECK(counts.at(Domain::math) == 4);
    CHECK(counts.at(Domain::gpqa) == 4);
    CHECK(counts.at(Domain::factual) == 4);
    CHECK(counts.at(Domain::geo) == 4);
    CHECK(suite.find("math-01")->answer_rule == AnswerRule::numeric_exact);
    CHECK(suite.find("gpqa-01")->answer_rule == AnswerRule::multiple_choice_letter);
    CHECK(suite.find("fact-01")->answer_rule == AnswerRule::normalized_string_contains);
    CHECK(suite.find("geo-01")->answer_rule == AnswerRule::normalized_string_contains);
    CHECK(suite.validation_warnings().empty());
}

TEST_CASE("duplicate probe ids rejected", "[probe]") {
    nlohmann::json doc = nlohmann::json::array();
    for (int i = 0; i < 2; ++i) {
        doc.push_back({{"id", "aime-01"},
                       {"domain", "math"},
                       {"question", "q"},
                       {"reference_answer", "1"}});
    }
    try {
        load_suite_from_json(doc, "dup");
        FAIL("expected duplicate-id error");
    } catch (const ProbeError& e) {
        CHECK(std::string(e.what()).find("aime-01") != std::string::npos);
    }
}

TEST_CASE("reference layout suite counts", "[probe]") {
    nlohmann::json doc = nlohmann::json::array();
    auto add = [&doc](const std::string& prefix, const std::string& domain, int n) {
        for (int i = 0; i < n; ++i) {
            doc.push_back({{"id", prefix + std::to_string(i)},
                           {"domain", domain},
                           {"question", "q" + std::to_string(i)},
                           {"reference_answer", "a"}});
        }
    };
    add("m", "math", 15);
    add("g", "gpqa", 10);
    add("f", "factual", 15);
    add("e", "geo", 15);
    const ProbeSuite suite = load_suite_from_json(doc, "reference");
    const auto counts = suite.domain_counts();
    CHECK(suite.probes.size() == 55);
    CHECK(counts.at(Domain::math) == 15);
    CHECK(counts.at(Domain::gpqa) == 10);
    CHECK(counts.at(Domain::factual) == 15);
    CHECK(counts.at(Domain::geo) == 15);
}

TEST_CASE("rendered prompt embeds the question twice", "[probe]") {
    Probe p = make_probe(AnswerRule::numeric_exact, "4");
    p.question_text = "What is 2+2?";
    const PromptEnvelope env = render_prompt(p);
    CHECK(env.system_message == dcc_system_message());
    CHECK(env.requires_structured_output);

    std::size_t hits = 0, at = 0;
    while ((at = env.user_message.find(p.question_text, at)) != std::string::npos) {
        ++hits;
        at += p.question_text.size();
    }
    CHECK(hits == 2);
    CHECK(env.user_message.find("knowledge_path") != std::string::npos);
    CHECK(env.user_message.find("final_answer") != std::string::npos);
    CHECK(env.user_message.find("Mount Rainier") != std::string::npos);

    const PromptEnvelope again = render_prompt(p);
    CHECK(env.user_message == again.user_message);

    p.question_text = "";
    CHECK_THROWS_AS(render_prompt(p), ProbeError);
}

TEST_CASE("numeric answers compare after integer normalization", "[probe]") {
    const Probe p = make_probe(AnswerRule::numeric_exact, "042");
    CHECK(validate_answer(p, "42"));
    CHECK(validate_answer(p, "  42  "));
    CHECK_FALSE(validate_answer(p, "43"));
    CHECK_FALSE(validate_answer(p, "about 42"));
    CHECK_FALSE(validate_answer(p, ""));

    const Probe q = make_probe(AnswerRule::numeric_exact, "0.5");
    CHECK(validate_answer(q, "0.50"));
    CHECK(validate_answer(q, "0.5000000001"));
    CHECK_FALSE(validate_answer(q, "0.51"));
}

TEST_CASE("multiple choice letters normalize", "[probe]") {
    const Probe p = make_probe(AnswerRule::multiple_choice_letter, "B");
    CHECK(validate_answer(p, "(b)"));
    CHECK(validate_answer(p, "B."));
    CHECK_FALSE(validate_answer(p, "(A)"));
    CHECK_FALSE(validate_answer(p, "BB"));
    CHECK_FALSE(validate_answer(p, "option b"));
}

TEST_CASE("contains rule is bidirectional and normalized", "[probe]") {
    const Probe p = make_probe(AnswerRule::normalized_string_contains, "Mount Rainier");
    CHECK(validate_answer(p, "The answer is Mount Rainier."));
    CHECK(validate_answer(p, "mount rainier"));
    CHECK(validate_answer(p, "Rainier"));  // candidate inside reference
    CHECK_FALSE(validate_answer(p, "Mount Hood"));
    CHECK_FALSE(validate_answer(p, ""));
    CHECK_FALSE(validate_answer(p, "..."));
}

TEST_CASE("every suite probe validates its own reference", "[probe]") {
    const ProbeSuite suite = load_suite((data_dir() / "suite.sample.json").string());
    for (const auto& p : suite.probes) {
        INFO(p.id);
        CHECK(validate_answer(p, p.reference_answer));
        CHECK(validate_answer(p, "  " + p.reference_answer + "\n"));
    }
}
