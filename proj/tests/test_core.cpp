#include <gtest/gtest.h>

#include "mor/core.hpp"

using namespace mor;

TEST(Matrix, FromRowsAndAccessors) {
    const auto m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
    EXPECT_EQ(m.rows(), 2u);
    EXPECT_EQ(m.cols(), 3u);
    EXPECT_DOUBLE_EQ(m(1, 2), 6.0);
    EXPECT_EQ(m.to_rows(), (std::vector<std::vector<double>>{{1, 2, 3}, {4, 5, 6}}));
}

TEST(Matrix, RaggedRowsRejected) {
    EXPECT_THROW(Matrix::from_rows({{1, 2}, {3}}), InputError);
}

TEST(Matrix, AppendConcatenatesRows) {
    auto a = Matrix::from_rows({{1, 2}});
    a.append(Matrix::from_rows({{3, 4}, {5, 6}}));
    EXPECT_EQ(a.rows(), 3u);
    EXPECT_DOUBLE_EQ(a(2, 0), 5.0);
    EXPECT_THROW(a.append(Matrix::from_rows({{1, 2, 3}})), InputError);
    Matrix empty;
    empty.append(a);
    EXPECT_EQ(empty, a);
}

TEST(Matrix, FiniteCheck) {
    auto m = Matrix::from_rows({{1, 2}});
    EXPECT_TRUE(m.all_finite());
    m(0, 1) = std::nan("");
    EXPECT_FALSE(m.all_finite());
}

TEST(Answers, Normalization) {
    EXPECT_EQ(normalize_answer("  The Red, Ball! "), "red ball");
    EXPECT_EQ(normalize_answer("A dog"), "dog");
    EXPECT_EQ(normalize_answer("..."), "");
    EXPECT_EQ(normalize_answer("A"), "a");
    EXPECT_EQ(normalize_answer("the a"), "the a");
}

TEST(Answers, MatchAgainstAnyGold) {
    const std::vector<std::string> gold = {"yes", "Yeah"};
    EXPECT_TRUE(match_answer("Yes.", gold));
    EXPECT_TRUE(match_answer("yeah", gold));
    EXPECT_FALSE(match_answer("no", gold));
    EXPECT_FALSE(match_answer("yes", {}));
}

TEST(Answers, RestrictToVocab) {
    const std::vector<std::string> vocab = {"yes", "no", "red ball"};
    EXPECT_EQ(restrict_to_vocab("No", vocab), "no");
    EXPECT_EQ(restrict_to_vocab("i think the red ball is there", vocab), "red ball");
    EXPECT_EQ(restrict_to_vocab("nothing", vocab), "");
    EXPECT_EQ(restrict_to_vocab("yes no", vocab), "yes");
}

TEST(Validation, ProblemFields) {
    Problem p{"p", "what?", {{{1.0, 2.0}, {}}}, {"x"}, {}};
    EXPECT_NO_THROW(validate(p));
    auto bad = p;
    bad.question = "   ";
    EXPECT_THROW(validate(bad), ValidationError);
    bad = p;
    bad.images.clear();
    EXPECT_THROW(validate(bad), ValidationError);
    bad = p;
    bad.images.push_back({{1.0}, {}});
    try {
        validate(bad);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.field(), "images");
    }
    bad = p;
    bad.images = {p.images[0], p.images[0], p.images[0]};
    EXPECT_THROW(validate(bad), ValidationError);
}

TEST(Validation, ConfigErrorsNameTheField) {
    auto field_of = [](PipelineConfig c) -> std::string {
        try {
            validate(c);
        } catch (const ValidationError& e) {
            return e.field();
        }
        return "";
    };
    PipelineConfig c;
    EXPECT_EQ(field_of(c), "");
    c.selection = SelectionPolicy::dynamic(1.5, 3);
    EXPECT_EQ(field_of(c), "selection.alpha");
    c.selection = SelectionPolicy::dynamic(0.9, 0);
    EXPECT_EQ(field_of(c), "selection.k_max");
    c.selection = SelectionPolicy::fixed(-1);
    EXPECT_EQ(field_of(c), "selection.k");
    c = {};
    c.prompts.push_back({0, "dup", PromptCategory::generic});
    EXPECT_EQ(field_of(c), "prompts[11].index");
    c = {};
    c.prompts[7].templ = "Tell me about {object}";
    EXPECT_EQ(field_of(c), "prompts[7].category");
    c = {};
    c.prompts.clear();
    EXPECT_EQ(field_of(c), "prompts");
    c.mode = Mode::vanilla;
    EXPECT_EQ(field_of(c), "");
    c = {};
    c.max_decode_len = 0;
    EXPECT_EQ(field_of(c), "max_decode_len");
}

TEST(DefaultPrompts, ElevenWithSpecificAndGenericSplit) {
    const auto p = default_prompts();
    ASSERT_EQ(p.size(), 11u);
    for (int i = 0; i < 11; ++i) {
        EXPECT_EQ(p[static_cast<std::size_t>(i)].index, i);
        EXPECT_EQ(p[static_cast<std::size_t>(i)].category, i <= 5 ? PromptCategory::specific : PromptCategory::generic);
    }
    EXPECT_EQ(p[0].templ, "Let's consider on");
    EXPECT_EQ(p[10].templ, "Caption");
}

TEST(ConfigIO, RoundTrip) {
    PipelineConfig c;
    c.mode = Mode::cot;
    c.pooling = Pooling::cls;
    c.fusion = Fusion::majority_vote;
    c.selection = SelectionPolicy::fixed(3);
    c.include_base_in_fusion = false;
    c.closed_vocab = std::vector<std::string>{"yes", "no"};
    c.seed = 42;
    const auto back = config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_EQ(back.selection.k, 3);
    EXPECT_EQ(back.fusion, Fusion::majority_vote);
}

TEST(ConfigIO, PartialDocumentKeepsDefaults) {
    const auto c = parse_config(R"({"fusion": "mv", "selection": {"kind": "fixed", "k": 2}})");
    EXPECT_EQ(c.fusion, Fusion::majority_vote);
    EXPECT_EQ(c.selection.kind, SelectionPolicy::Kind::fixed);
    EXPECT_EQ(c.prompts.size(), 11u);
    EXPECT_EQ(c.mode, Mode::mor);
}

TEST(ConfigIO, UnknownKeyIsSchemaError) {
    EXPECT_THROW(parse_config(R"({"fusoin": "fid"})"), SchemaError);
}

TEST(ConfigIO, WrongTypeIsSchemaError) {
    EXPECT_THROW(parse_config(R"({"max_decode_len": "long"})"), SchemaError);
}

TEST(ConfigIO, BadEnumIsValidationError) {
    try {
        parse_config(R"({"pooling": "max"})");
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.field(), "pooling");
    }
}

TEST(ConfigIO, ParseErrorCarriesLine) {
    try {
        parse_config("{\n  \"mode\": \"mor\",\n  oops\n}", "cfg.json");
        FAIL();
    } catch (const SchemaError& e) {
        EXPECT_NE(std::string(e.what()).find("cfg.json:3"), std::string::npos) << e.what();
    }
}

TEST(ConfigIO, MissingFileIsInputError) {
    EXPECT_THROW(load_config("/nonexistent/config.json"), InputError);
}

TEST(Errors, Hierarchy) {
    EXPECT_TRUE((std::is_base_of_v<BackendError, TimeoutError>));
    EXPECT_TRUE((std::is_base_of_v<BackendError, ConnectivityError>));
    EXPECT_TRUE((std::is_base_of_v<BackendError, MalformedResponseError>));
    EXPECT_TRUE((std::is_base_of_v<BackendError, DimensionMismatchError>));
    EXPECT_TRUE((std::is_base_of_v<Error, InputError>));
    EXPECT_FALSE((std::is_base_of_v<BackendError, InputError>));
}
