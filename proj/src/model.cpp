#include "sesim/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace sesim {

namespace {

Matrix glorot(int rows, int cols, Rng& rng) {
    Matrix m(rows, cols);
    const double bound = std::sqrt(6.0 / (rows + cols));
    for (size_t i = 0; i < m.size(); ++i)
        m.data()[i] = rng.next_range(-bound, bound);
    return m;
}

}  // namespace

ModelState init_model(const ModelConfig& cfg, uint64_t seed) {
    if (cfg.in_dim < 1 || cfg.hidden < 1 || cfg.embed < 1 ||
        cfg.primary_hidden < 1 || cfg.con_hidden < 1 || cfg.num_metapaths < 0)
        throw ArgumentError("init_model: invalid dimensions");
    Rng rng(seed);
    ModelState s;
    s.cfg = cfg;
    s.gcn.w0 = glorot(cfg.in_dim, cfg.hidden, rng);
    s.gcn.w1 = glorot(cfg.hidden, cfg.embed, rng);
    s.primary.w1 = glorot(cfg.embed, cfg.primary_hidden, rng);
    s.primary.b1 = Matrix(1, cfg.primary_hidden);
    s.primary.w2 = glorot(cfg.primary_hidden, cfg.primary_out(), rng);
    s.primary.b2 = Matrix(1, cfg.primary_out());
    for (int d = 0; d < cfg.num_metapaths; ++d) {
        PretextHead h;
        h.w = glorot(cfg.embed, cfg.pretext_out(), rng);
        h.b = Matrix(1, cfg.pretext_out());
        s.pretext.push_back(std::move(h));
    }
    s.con.w1 = glorot(cfg.embed, cfg.con_hidden, rng);
    s.con.b1 = Matrix(1, cfg.con_hidden);
    s.con.w2 = glorot(cfg.con_hidden, 1, rng);
    s.con.b2 = Matrix(1, 1);
    return s;
}

std::vector<ParamRef> model_params(ModelState& s) {
    std::vector<ParamRef> out = {
        {"gcn.w0", &s.gcn.w0},         {"gcn.w1", &s.gcn.w1},
        {"primary.w1", &s.primary.w1}, {"primary.b1", &s.primary.b1},
        {"primary.w2", &s.primary.w2}, {"primary.b2", &s.primary.b2},
    };
    for (auto& h : s.pretext) {
        out.push_back({"pretext.w", &h.w});
        out.push_back({"pretext.b", &h.b});
    }
    return out;
}

std::vector<ParamRef> lambda_params(ContributionNet& con) {
    return {{"con.w1", &con.w1},
            {"con.b1", &con.b1},
            {"con.w2", &con.w2},
            {"con.b2", &con.b2}};
}

std::vector<ParamRef> lambda_params(ModelState& s) { return lambda_params(s.con); }

GcnParamsT lift(ad::Tape& t, const GcnParams& p, bool grad) {
    return {t.input(p.w0, grad), t.input(p.w1, grad)};
}
PrimaryHeadT lift(ad::Tape& t, const PrimaryHead& p, bool grad) {
    return {t.input(p.w1, grad), t.input(p.b1, grad), t.input(p.w2, grad),
            t.input(p.b2, grad)};
}
PretextHeadT lift(ad::Tape& t, const PretextHead& p, bool grad) {
    return {t.input(p.w, grad), t.input(p.b, grad)};
}
ContributionNetT lift(ad::Tape& t, const ContributionNet& p, bool grad) {
    return {t.input(p.w1, grad), t.input(p.b1, grad), t.input(p.w2, grad),
            t.input(p.b2, grad)};
}

ad::Tensor gcn_forward(ad::Tape& t, ad::Tensor x, ad::Tensor norm_adj,
                       const GcnParamsT& p) {
    ad::Tensor h1 = t.relu(t.matmul(t.matmul(norm_adj, x), p.w0));
    return t.matmul(t.matmul(norm_adj, h1), p.w1);
}

namespace {

ad::Tensor mlp2(ad::Tape& t, ad::Tensor in, const PrimaryHeadT& head) {
    ad::Tensor h = t.relu(t.add(t.matmul(in, head.w1), head.b1));
    return t.add(t.matmul(h, head.w2), head.b2);
}

}  // namespace

ad::Tensor link_score(ad::Tape& t, ad::Tensor zi, ad::Tensor zj,
                      const PrimaryHeadT& head) {
    return t.sigmoid(mlp2(t, t.mul(zi, zj), head));
}

ad::Tensor node_logits_raw(ad::Tape& t, ad::Tensor z, const PrimaryHeadT& head) {
    return mlp2(t, z, head);
}

ad::Tensor node_logits(ad::Tape& t, ad::Tensor z, const PrimaryHeadT& head) {
    return t.softmax_rows(mlp2(t, z, head));
}

ad::Tensor pretext_predict(ad::Tape& t, ad::Tensor zi, ad::Tensor zj,
                           const PretextHeadT& head) {
    return t.add(t.matmul(t.abs(t.sub(zi, zj)), head.w), head.b);
}

ad::Tensor contribution(ad::Tape& t, ad::Tensor phi,
                        const ContributionNetT& net) {
    ad::Tensor h = t.relu(t.add(t.matmul(phi, net.w1), net.b1));
    return t.sigmoid(t.add(t.matmul(h, net.w2), net.b2));
}

Matrix contribution_values(const Matrix& phi, const ContributionNet& net) {
    ad::Tape t;
    ad::Tensor out = contribution(t, t.constant(phi), lift(t, net, false));
    return out.value();
}

namespace {

constexpr char kMagic[6] = {'S', 'E', 'S', 'I', 'M', '1'};

void put_u32(std::ofstream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw ArtifactError(path + ": truncated checkpoint");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) |
           (static_cast<uint32_t>(b[3]) << 24);
}

void put_matrix(std::ofstream& out, const Matrix& m) {
    put_u32(out, static_cast<uint32_t>(m.rows()));
    put_u32(out, static_cast<uint32_t>(m.cols()));
    static_assert(sizeof(double) == 8);
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * 8));
}

Matrix get_matrix(std::ifstream& in, const std::string& path) {
    const uint32_t rows = get_u32(in, path);
    const uint32_t cols = get_u32(in, path);
    if (rows > (1u << 24) || cols > (1u << 24))
        throw ArtifactError(path + ": implausible matrix shape");
    Matrix m(static_cast<int>(rows), static_cast<int>(cols));
    if (!in.read(reinterpret_cast<char*>(m.data()),
                 static_cast<std::streamsize>(m.size() * 8)))
        throw ArtifactError(path + ": truncated checkpoint payload");
    if (!m.all_finite())
        throw ArtifactError(path + ": non-finite checkpoint values");
    return m;
}

}  // namespace

void save_checkpoint(const ModelState& s, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(kMagic, sizeof kMagic);
    put_u32(out, static_cast<uint32_t>(s.cfg.num_metapaths));
    put_u32(out, s.cfg.task == Task::kLinkPrediction ? 0u : 1u);
    put_u32(out, static_cast<uint32_t>(s.cfg.num_classes));
    put_u32(out, s.cfg.pretext_mode == PretextMode::kRegression ? 0u : 1u);
    put_u32(out, static_cast<uint32_t>(s.cfg.j_max));
    ModelState& mut = const_cast<ModelState&>(s);
    for (const ParamRef& p : model_params(mut)) put_matrix(out, *p.m);
    for (const ParamRef& p : lambda_params(mut)) put_matrix(out, *p.m);
    if (!out) throw DataError("write failed for " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactError("cannot read checkpoint " + path.string());
    char magic[6];
    if (!in.read(magic, 6) || std::memcmp(magic, kMagic, 6) != 0)
        throw ArtifactError(path.string() + ": bad checkpoint magic");
    ModelState s;
    s.cfg.num_metapaths = static_cast<int>(get_u32(in, path.string()));
    s.cfg.task =
        get_u32(in, path.string()) == 0 ? Task::kLinkPrediction : Task::kNodeClassification;
    s.cfg.num_classes = static_cast<int>(get_u32(in, path.string()));
    s.cfg.pretext_mode = get_u32(in, path.string()) == 0
                             ? PretextMode::kRegression
                             : PretextMode::kClassification;
    s.cfg.j_max = static_cast<int>(get_u32(in, path.string()));

    s.gcn.w0 = get_matrix(in, path.string());
    s.gcn.w1 = get_matrix(in, path.string());
    s.primary.w1 = get_matrix(in, path.string());
    s.primary.b1 = get_matrix(in, path.string());
    s.primary.w2 = get_matrix(in, path.string());
    s.primary.b2 = get_matrix(in, path.string());
    for (int d = 0; d < s.cfg.num_metapaths; ++d) {
        PretextHead h;
        h.w = get_matrix(in, path.string());
        h.b = get_matrix(in, path.string());
        s.pretext.push_back(std::move(h));
    }
    s.con.w1 = get_matrix(in, path.string());
    s.con.b1 = get_matrix(in, path.string());
    s.con.w2 = get_matrix(in, path.string());
    s.con.b2 = get_matrix(in, path.string());

    s.cfg.in_dim = s.gcn.w0.rows();
    s.cfg.hidden = s.gcn.w0.cols();
    s.cfg.embed = s.gcn.w1.cols();
    s.cfg.primary_hidden = s.primary.w1.cols();
    s.cfg.con_hidden = s.con.w1.cols();
    return s;
}

}  // namespace sesim
