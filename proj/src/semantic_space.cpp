#include "relink/semantic_space.hpp"

#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "relink/error.hpp"
#include "relink/llm_gateway.hpp"
#include "relink/random.hpp"

namespace relink {

using nlohmann::json;

namespace {

void append(std::vector<double>& out, const Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
}

void append(std::vector<double>& out, const Vec& v) { out.insert(out.end(), v.data(), v.data() + v.size()); }

void take(const std::vector<double>& in, std::size_t& pos, Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = in.at(pos++);
}

void take(const std::vector<double>& in, std::size_t& pos, Vec& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = in.at(pos++);
}

} // namespace

ProjectionAdapter ProjectionAdapter::initial(int dim, int raw_dim, double temperature, std::uint64_t seed) {
    if (dim < 1 || raw_dim < 1) throw Error(ErrorCode::InvalidArgument, "adapter dimensions must be positive");
    if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be > 0");
    ProjectionAdapter a;
    a.temperature = temperature;
    a.seed = seed;
    auto make = [&](std::uint64_t stream) {
        AffineMap m{Mat::Zero(dim, raw_dim), Vec::Zero(dim)};
        if (dim == raw_dim) {
            m.weight.setIdentity();
        } else {
            Rng rng(derive_seed(seed, stream));
            const double scale = 1.0 / std::sqrt(static_cast<double>(raw_dim));
            for (int r = 0; r < dim; ++r)
                for (int c = 0; c < raw_dim; ++c) m.weight(r, c) = scale * rng.normal();
        }
        return m;
    };
    a.factual = make(1);
    a.latent = make(2);
    return a;
}

std::vector<double> ProjectionAdapter::flatten() const {
    std::vector<double> out;
    append(out, factual.weight);
    append(out, factual.bias);
    append(out, latent.weight);
    append(out, latent.bias);
    return out;
}

void ProjectionAdapter::unflatten(const std::vector<double>& values) {
    std::size_t pos = 0;
    take(values, pos, factual.weight);
    take(values, pos, factual.bias);
    take(values, pos, latent.weight);
    take(values, pos, latent.bias);
    if (pos != values.size()) throw Error(ErrorCode::DimensionMismatch, "adapter weight count mismatch");
}

std::string ProjectionAdapter::parameter_hash() const {
    auto flat = flatten();
    flat.push_back(temperature);
    return hash_doubles(flat);
}

void ProjectionAdapter::save(const std::filesystem::path& json_path) const {
    auto weights = json_path;
    weights.replace_extension(".f32");
    json header = {{"schema_version", kSchemaVersion},
                   {"dim", dim()},
                   {"raw_dim", raw_dim()},
                   {"temperature", temperature},
                   {"seed", seed},
                   {"epoch", epoch},
                   {"layout", {"factual.weight", "factual.bias", "latent.weight", "latent.bias"}},
                   {"weights_file", weights.filename().string()}};
    write_f32_file(weights, flatten());
    write_file(json_path, header.dump(1) + "\n");
}

ProjectionAdapter ProjectionAdapter::load(const std::filesystem::path& json_path) {
    json header;
    try {
        header = json::parse(read_file(json_path));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Parse, fmt::format("{}: {}", json_path.string(), e.what()));
    }
    if (header.value("schema_version", 0) != kSchemaVersion)
        throw Error(ErrorCode::Parse, "adapter: unsupported schema_version");
    const int dim = header.at("dim").get<int>();
    const int raw = header.at("raw_dim").get<int>();
    ProjectionAdapter a;
    a.factual = {Mat::Zero(dim, raw), Vec::Zero(dim)};
    a.latent = {Mat::Zero(dim, raw), Vec::Zero(dim)};
    a.temperature = header.at("temperature").get<double>();
    a.seed = header.at("seed").get<std::uint64_t>();
    a.epoch = header.at("epoch").get<int>();
    a.unflatten(read_f32_file(json_path.parent_path() / header.at("weights_file").get<std::string>()));
    return a;
}

// ---- encoding --------------------------------------------------------------

std::string linearize_triple(const FactTriple& t, const EntityCatalog& catalog) {
    return fmt::format("{} {} {}", catalog.name_of(t.head), t.predicate, catalog.name_of(t.tail));
}

Vec normalized(const Vec& v) {
    const double n = v.norm();
    if (!(n > 1e-12) || !std::isfinite(n))
        throw Error(ErrorCode::DegenerateVector, "cannot normalize a zero or non-finite vector");
    return v / n;
}

static void check_raw(const Vec& raw, const ProjectionAdapter& adapter) {
    if (raw.size() != adapter.raw_dim())
        throw Error(ErrorCode::DimensionMismatch,
                    fmt::format("raw embedding has dimension {}, adapter expects {}", raw.size(), adapter.raw_dim()));
}

EdgeVector project_factual(const Vec& raw, const ProjectionAdapter& adapter) {
    check_raw(raw, adapter);
    return {normalized(adapter.factual.apply(raw)), SourceKind::Explicit};
}

EdgeVector project_latent(const Vec& raw, const ProjectionAdapter& adapter) {
    check_raw(raw, adapter);
    return {normalized(adapter.latent.apply(raw)), SourceKind::Latent};
}

EdgeVector encode_triple(const FactTriple& t, const EntityCatalog& catalog, LlmGateway& gateway,
                         const ProjectionAdapter& adapter) {
    return project_factual(gateway.embed_one(linearize_triple(t, catalog)), adapter);
}

EdgeVector encode_text(const std::string& text, LlmGateway& gateway, const ProjectionAdapter& adapter) {
    return project_factual(gateway.embed_one(text), adapter);
}

EdgeVector encode_latent(const LatentRelation& r, const ProjectionAdapter& adapter) {
    return project_latent(r.vector, adapter);
}

double cosine(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, "cosine: dimension mismatch");
    const double na = a.norm(), nb = b.norm();
    if (!(na > 0.0) || !(nb > 0.0)) throw Error(ErrorCode::DegenerateVector, "cosine of a zero vector");
    return a.dot(b) / (na * nb);
}

// ---- contrastive objective -------------------------------------------------

namespace {

// Row-wise InfoNCE on a similarity matrix already divided by the temperature.
// Returns the mean loss; if `dlogits` is non-null it receives d loss / d logits.
double info_nce(const Mat& logits, Mat* dlogits) {
    const Eigen::Index b = logits.rows();
    double loss = 0.0;
    if (dlogits) dlogits->setZero(b, b);
    for (Eigen::Index i = 0; i < b; ++i) {
        const double mx = logits.row(i).maxCoeff();
        const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp().matrix();
        const double z = e.sum();
        loss += -(logits(i, i) - mx) + std::log(z);
        if (dlogits) {
            dlogits->row(i) = e / z;
            (*dlogits)(i, i) -= 1.0;
        }
    }
    if (dlogits) *dlogits /= static_cast<double>(b);
    return loss / static_cast<double>(b);
}

} // namespace

double contrastive_loss(const std::vector<EdgeVector>& factual, const std::vector<EdgeVector>& latent,
                        double temperature) {
    if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be > 0");
    if (factual.size() != latent.size()) throw Error(ErrorCode::InvalidArgument, "contrastive batch sides differ");
    if (factual.size() < 2) throw Error(ErrorCode::InvalidArgument, "contrastive batch needs at least 2 pairs");
    const auto b = static_cast<Eigen::Index>(factual.size());
    const auto d = factual.front().vector.size();
    Mat u(b, d), w(b, d);
    for (Eigen::Index i = 0; i < b; ++i) {
        if (factual[i].vector.size() != d || latent[i].vector.size() != d)
            throw Error(ErrorCode::DimensionMismatch, "contrastive batch vectors differ in dimension");
        u.row(i) = normalized(factual[i].vector).transpose();
        w.row(i) = normalized(latent[i].vector).transpose();
    }
    return info_nce(u * w.transpose() / temperature, nullptr);
}

AdapterGradient AdapterGradient::zeros_like(const ProjectionAdapter& a) {
    return {Mat::Zero(a.dim(), a.raw_dim()), Vec::Zero(a.dim()), Mat::Zero(a.dim(), a.raw_dim()), Vec::Zero(a.dim())};
}

double alignment_loss(const ProjectionAdapter& adapter, const std::vector<AlignmentPair>& batch,
                      AdapterGradient* grad) {
    if (batch.size() < 2) throw Error(ErrorCode::InvalidArgument, "alignment batch needs at least 2 pairs");
    if (!(adapter.temperature > 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be > 0");
    const auto b = static_cast<Eigen::Index>(batch.size());
    const int d = adapter.dim();
    Mat yf(b, d), yl(b, d), u(b, d), w(b, d);
    Vec nf(b), nl(b);
    for (Eigen::Index i = 0; i < b; ++i) {
        check_raw(batch[i].factual_raw, adapter);
        check_raw(batch[i].latent_raw, adapter);
        yf.row(i) = adapter.factual.apply(batch[i].factual_raw).transpose();
        yl.row(i) = adapter.latent.apply(batch[i].latent_raw).transpose();
        nf[i] = yf.row(i).norm();
        nl[i] = yl.row(i).norm();
        if (!(nf[i] > 1e-12) || !(nl[i] > 1e-12))
            throw Error(ErrorCode::DegenerateVector, "projected alignment vector has zero norm");
        u.row(i) = yf.row(i) / nf[i];
        w.row(i) = yl.row(i) / nl[i];
    }
    const double tau = adapter.temperature;
    Mat g;
    const double loss = info_nce(u * w.transpose() / tau, grad ? &g : nullptr);
    if (!grad) return loss;

    // logits = U W^T / tau  =>  dU = G W / tau,  dW = G^T U / tau.
    const Mat du = g * w / tau;
    const Mat dw = g.transpose() * u / tau;
    *grad = AdapterGradient::zeros_like(adapter);
    for (Eigen::Index i = 0; i < b; ++i) {
        // Through y -> y / |y|: dy = (I - u u^T) du / |y|.
        const Vec ui = u.row(i).transpose(), wi = w.row(i).transpose();
        const Vec dui = du.row(i).transpose(), dwi = dw.row(i).transpose();
        const Vec dyf = (dui - ui * ui.dot(dui)) / nf[i];
        const Vec dyl = (dwi - wi * wi.dot(dwi)) / nl[i];
        grad->factual_weight += dyf * batch[i].factual_raw.transpose();
        grad->factual_bias += dyf;
        grad->latent_weight += dyl * batch[i].latent_raw.transpose();
        grad->latent_bias += dyl;
    }
    return loss;
}

ProjectionAdapter train_alignment(const std::vector<AlignmentPair>& dataset, ProjectionAdapter adapter,
                                  const TrainConfig& config, TrainLog* log) {
    if (config.batch_size < 2) throw Error(ErrorCode::Config, "alignment batch_size must be >= 2");
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(adapter.epoch)));
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double total = 0.0;
        int batches = 0;
        for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(config.batch_size));
            if (hi - lo < 2) continue;
            std::vector<AlignmentPair> batch;
            for (std::size_t k = lo; k < hi; ++k) batch.push_back(dataset[order[k]]);
            AdapterGradient grad;
            const double loss = alignment_loss(adapter, batch, &grad);
            if (!std::isfinite(loss))
                throw Error(ErrorCode::TrainingDiverged,
                            fmt::format("alignment loss is {} at epoch {} batch {}", loss, adapter.epoch, batches));
            adapter.factual.weight -= config.learning_rate * grad.factual_weight;
            adapter.factual.bias -= config.learning_rate * grad.factual_bias;
            adapter.latent.weight -= config.learning_rate * grad.latent_weight;
            adapter.latent.bias -= config.learning_rate * grad.latent_bias;
            total += loss;
            ++batches;
        }
        ++adapter.epoch;
        const double mean = batches ? total / batches : 0.0;
        if (log) log->epoch_loss.push_back(mean);
        spdlog::debug("alignment epoch {}: loss {:.6f} over {} batches", adapter.epoch, mean, batches);
    }
    return adapter;
}

std::vector<std::pair<FactTriple, LatentRelation>> mine_alignment_pairs(const GraphBackbone& backbone,
                                                                        const LatentPool& pool) {
    std::vector<std::pair<FactTriple, LatentRelation>> out;
    for (const auto& [_, t] : backbone.triples()) {
        for (const auto& r : pool.neighbors(t.head)) {
            const bool same_pair = (r.e_i == t.head && r.e_j == t.tail) || (r.e_i == t.tail && r.e_j == t.head);
            if (same_pair && r.context == t.provenance) out.emplace_back(t, r);
        }
    }
    return out;
}

std::vector<AlignmentPair> materialize_alignment_pairs(
    const std::vector<std::pair<FactTriple, LatentRelation>>& pairs, const EntityCatalog& catalog,
    LlmGateway& gateway) {
    std::vector<AlignmentPair> out;
    if (pairs.empty()) return out;
    std::vector<std::string> texts;
    for (const auto& [t, _] : pairs) texts.push_back(linearize_triple(t, catalog));
    const auto raws = gateway.embed(texts);
    for (std::size_t i = 0; i < pairs.size(); ++i) out.push_back({raws[i], pairs[i].second.vector});
    return out;
}

} // namespace relink
