#include <gtest/gtest.h>

#include "fake_server.hpp"
#include "mor/mor.hpp"
#include "support.hpp"

using namespace mor;
using mor::testing::FakeServer;
using mor::testing::Fault;

namespace {

std::vector<ImageInput> one_image(int d, double fill = 0.25) { return {{std::vector<double>(static_cast<std::size_t>(d), fill), {}}}; }

}  // namespace

TEST(Tokenize, StripsEdgePunctuation) {
    EXPECT_EQ(tokenize("Hello, World! it's (fine)."), (std::vector<std::string>{"hello", "world", "it's", "fine"}));
    EXPECT_EQ(tokenize(" ... ? "), (std::vector<std::string>{"...", "?"}));
    EXPECT_TRUE(tokenize("  ").empty());
}

TEST(StableRng, ReproducibleStreams) {
    detail::StableRng a(5), b(5), c(6);
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next();
        EXPECT_EQ(x, b.next());
        EXPECT_NE(x, c.next());
    }
    detail::StableRng r(1);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
        EXPECT_LT(r.below(7), 7u);
    }
}

TEST(ToyBackend, ShapeIsTokensPlusPatches) {
    const auto b = make_toy_backend(1, 16, default_toy_vocab(), 40);
    const auto img = one_image(40);
    const auto m = b->encode("what is the dog doing", img);
    EXPECT_EQ(m.cols(), 16u);
    EXPECT_EQ(m.rows(), 5u + 3u);  // ceil(40/16) patches
    const std::vector<ImageInput> two = {img[0], img[0]};
    EXPECT_EQ(b->encode("dog", two).rows(), 1u + 6u);
    EXPECT_EQ(b->encode("", img).rows(), 3u);
}

TEST(ToyBackend, DeterministicPerSeed) {
    const auto a = make_toy_backend(3, 16);
    const auto b = make_toy_backend(3, 16);
    const auto c = make_toy_backend(4, 16);
    const auto img = one_image(32, 0.7);
    EXPECT_EQ(a->encode("red ball", img), b->encode("red ball", img));
    EXPECT_NE(a->encode("red ball", img), c->encode("red ball", img));
    const auto m = a->encode("red ball", img);
    EXPECT_EQ(a->decode(m, 8), b->decode(m, 8));
    EXPECT_EQ(a->generate("red ball", img, 8), a->decode(m, 8));
}

TEST(ToyBackend, DecodeRespectsMaxLenAndVocab) {
    const auto b = make_toy_backend(9, 16);
    const auto m = b->encode("is there a cat", one_image(32));
    for (int len : {1, 3, 16}) {
        const auto tokens = split_whitespace(b->decode(m, len));
        EXPECT_LE(tokens.size(), static_cast<std::size_t>(len));
        for (const auto& t : tokens) {
            EXPECT_NE(t, kEosToken);
            EXPECT_NE(t, kUnkToken);
        }
    }
}

TEST(ToyBackend, InputErrors) {
    const auto b = make_toy_backend(1, 16, default_toy_vocab(), 32);
    EXPECT_THROW(b->encode("x", one_image(31)), InputError);
    EXPECT_THROW(b->encode("", {}), InputError);
    const std::vector<ImageInput> three(3, one_image(32)[0]);
    EXPECT_THROW(b->encode("x", three), InputError);
    auto bad = one_image(32);
    bad[0].features[3] = std::numeric_limits<double>::infinity();
    EXPECT_THROW(b->encode("x", bad), InputError);
    EXPECT_THROW(b->decode(Matrix(2, 8), 4), InputError);
    EXPECT_THROW(b->decode(Matrix(), 4), InputError);
    EXPECT_THROW(b->decode(Matrix(2, 16), 0), InputError);
    EXPECT_THROW(make_toy_backend(1, 4), InputError);
    EXPECT_THROW(make_toy_backend(1, 16, {"a", "b"}), InputError);
}

TEST(OracleBackend, SpecValidation) {
    OracleTaskSpec s;
    EXPECT_NO_THROW(validate(s));
    s.num_aspects = 9;
    EXPECT_THROW(validate(s), ValidationError);
    s = {};
    s.aspect_vocab = {"red", "red", "blue"};
    EXPECT_THROW(validate(s), ValidationError);
    s = {};
    s.distractor_ratio = 1.5;
    EXPECT_THROW(validate(s), ValidationError);
    s = {};
    s.cues = {"only one"};
    EXPECT_THROW(validate(s), ValidationError);
    s = {};
    EXPECT_EQ(to_json(oracle_spec_from_json(to_json(s))), to_json(s));
}

TEST(OracleBackend, GeneratorIsDeterministic) {
    auto [b1, g1] = make_oracle_backend({});
    auto [b2, g2] = make_oracle_backend({});
    for (std::size_t i = 0; i < 30; ++i) {
        const auto p = g1.problem(i), q = g2.problem(i);
        EXPECT_EQ(p.id, q.id);
        EXPECT_EQ(p.images[0].features, q.images[0].features);
        EXPECT_EQ(p.gold_answers, q.gold_answers);
    }
    EXPECT_EQ(g1.problems(5).size(), 5u);
    EXPECT_EQ(g1.problem(3).id, "oracle-00003");
}

TEST(OracleBackend, LayoutAndAnswers) {
    auto [backend, gen] = make_oracle_backend({});
    EXPECT_EQ(gen.relevant_count(), 3u);
    for (std::size_t i = 0; i < 50; ++i) {
        const auto p = gen.problem(i);
        const auto l = backend->parse(p.images[0]);
        EXPECT_EQ(backend->answer_for(l), p.gold_answers.at(0));
        EXPECT_EQ(static_cast<int>(split_whitespace(p.gold_answers[0]).size()), l.aspects);
        // every used slot is reachable through at least one relevant cue
        for (int j = 0; j < l.aspects; ++j)
            EXPECT_NE(std::find(l.roles.begin(), l.roles.end(), j), l.roles.end());
        for (std::size_t c = 0; c < l.roles.size(); ++c) {
            if (l.roles[c] >= 0) {
                EXPECT_GE(l.similarity[c], OracleBackend::kRelevantLow);
                EXPECT_LE(l.similarity[c], OracleBackend::kRelevantHigh);
            } else {
                EXPECT_LT(l.similarity[c], OracleBackend::kDistractorHigh);
            }
        }
    }
}

TEST(OracleBackend, CueRelevantThoughtScoresHighDistractorLow) {
    auto [backend, gen] = make_oracle_backend({});
    const auto p = gen.problem(0);
    const auto l = backend->parse(p.images[0]);
    const auto base = backend->encode(p.question, p.images);
    const auto& cues = backend->spec().cues;
    for (std::size_t c = 0; c < cues.size(); ++c) {
        const auto r = backend->generate(p.question + " " + cues[c] + ":", p.images, 16);
        const auto thought = backend->encode(cues[c] + ". " + r + ". Therefore, " + p.question, p.images);
        const double s = thought.row(0)[0] / std::sqrt(std::inner_product(thought.row(0).begin(), thought.row(0).end(),
                                                                          thought.row(0).begin(), 0.0));
        EXPECT_NEAR(s, l.similarity[c], 1e-12);
        if (l.roles[c] >= 0) {
            EXPECT_GE(s, 0.9);
            EXPECT_EQ(backend->decode(thought, 16), split_whitespace(p.gold_answers[0])[static_cast<std::size_t>(l.roles[c])]);
        } else {
            EXPECT_LT(s, 0.1);
            EXPECT_EQ(r, OracleBackend::noise_token(c));
        }
    }
    EXPECT_EQ(backend->decode(base, 16), "unknown");
}

TEST(OracleBackend, RejectsForeignImages) {
    auto [backend, gen] = make_oracle_backend({});
    auto p = gen.problem(0);
    p.images[0].features[1] = 0.5;
    EXPECT_THROW(backend->encode("x", p.images), InputError);
    EXPECT_THROW(backend->encode("x", one_image(5)), InputError);
}

// ---------------------------------------------------------------------------
// Remote wire protocol
// ---------------------------------------------------------------------------

TEST(RemoteBackend, MatchesLocalBackendOverTheWire) {
    const auto local = make_toy_backend(11, 16, default_toy_vocab(), 24);
    FakeServer server(local);
    const auto remote = make_remote_backend(server.url(), 5000);
    const auto info = remote->info();
    EXPECT_EQ(info.name, "toy");
    EXPECT_EQ(info.dim, 16);
    EXPECT_EQ(info.d_img, 24);

    const auto img = one_image(24, 0.3);
    const auto m = remote->encode("how many birds are there", img);
    EXPECT_EQ(m, local->encode("how many birds are there", img));
    EXPECT_EQ(remote->generate("describe the scene", img, 6), local->generate("describe the scene", img, 6));
    EXPECT_EQ(remote->decode(m, 6), local->decode(m, 6));
}

TEST(RemoteBackend, FullPipelineMatchesLocal) {
    const auto local = make_toy_backend(2, 16, default_toy_vocab(), 20);
    FakeServer server(local);
    const auto remote = make_remote_backend(server.url(), 5000);
    PipelineConfig cfg;
    cfg.max_decode_len = 4;
    for (const auto& p : mor::testing::random_toy_problems(3, 20, 99)) {
        const auto a = answer_problem(*local, p, cfg);
        const auto b = answer_problem(*remote, p, cfg);
        EXPECT_EQ(a.answer, b.answer);
        EXPECT_EQ(a.similarities, b.similarities);
        EXPECT_EQ(a.selected_indices, b.selected_indices);
        EXPECT_FALSE(b.failure.has_value());
    }
}

TEST(RemoteBackend, RaggedEmbeddingsAreMalformed) {
    FakeServer server(make_toy_backend(1, 16, default_toy_vocab(), 16), Fault::ragged);
    const auto remote = make_remote_backend(server.url(), 5000);
    EXPECT_THROW(remote->encode("two words", one_image(16)), MalformedResponseError);
}

TEST(RemoteBackend, NonNumericEmbeddingsAreMalformed) {
    FakeServer server(make_toy_backend(1, 16, default_toy_vocab(), 16), Fault::non_numeric);
    const auto remote = make_remote_backend(server.url(), 5000);
    EXPECT_THROW(remote->encode("two words", one_image(16)), MalformedResponseError);
}

TEST(RemoteBackend, WidthDifferentFromDeclaredDimIsMismatch) {
    FakeServer server(make_toy_backend(1, 16, default_toy_vocab(), 16), Fault::wrong_width);
    const auto remote = make_remote_backend(server.url(), 5000);
    EXPECT_THROW(remote->encode("word", one_image(16)), DimensionMismatchError);
}

TEST(RemoteBackend, NonJsonBodyIsMalformed) {
    FakeServer server(make_toy_backend(1, 16, default_toy_vocab(), 16), Fault::not_json);
    const auto remote = make_remote_backend(server.url(), 5000);
    EXPECT_THROW(remote->info(), MalformedResponseError);
}

TEST(RemoteBackend, ServerErrorSurfacesMessage) {
    FakeServer server(make_toy_backend(1, 16, default_toy_vocab(), 16), Fault::server_error);
    const auto remote = make_remote_backend(server.url(), 5000);
    try {
        remote->info();
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_NE(std::string(e.what()).find("model crashed"), std::string::npos);
    }
}

TEST(RemoteBackend, ClientSideValidationPrecedesRequest) {
    FakeServer server(make_toy_backend(1, 16, default_toy_vocab(), 16));
    const auto remote = make_remote_backend(server.url(), 5000);
    remote->info();
    const int before = server.requests();
    EXPECT_THROW(remote->encode("x", one_image(3)), InputError);
    EXPECT_THROW(remote->decode(Matrix(1, 3), 4), InputError);
    EXPECT_EQ(server.requests(), before);
}

TEST(RemoteBackend, SlowServerTimesOut) {
    FakeServer server(make_toy_backend(1, 16, default_toy_vocab(), 16), Fault::slow, 1500);
    const auto remote = make_remote_backend(server.url(), 200);
    EXPECT_THROW(remote->info(), TimeoutError);
}

TEST(RemoteBackend, UnreachableIsConnectivityError) {
    const int port = mor::testing::closed_port();
    const auto remote = make_remote_backend("http://127.0.0.1:" + std::to_string(port), 500);
    EXPECT_THROW(remote->info(), ConnectivityError);
}

TEST(RemoteBackend, UrlValidation) {
    EXPECT_THROW(make_remote_backend("ftp://host", 100), InputError);
    EXPECT_THROW(make_remote_backend("http://", 100), InputError);
    EXPECT_THROW(make_remote_backend("http://localhost:8080", 0), InputError);
    EXPECT_NO_THROW(make_remote_backend("http://localhost:8080/", 100));
}

TEST(RemoteBackend, FailureIsRecordedPerProblem) {
    const int port = mor::testing::closed_port();
    const auto remote = make_remote_backend("http://127.0.0.1:" + std::to_string(port), 300);
    Problem p{"p0", "is it red?", one_image(16), {"yes"}, {}};
    const auto rec = answer_problem(*remote, p, PipelineConfig{});
    ASSERT_TRUE(rec.failure.has_value());
    EXPECT_TRUE(rec.answer.empty());
}
