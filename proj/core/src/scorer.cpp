#include "treecrf/scorer.hpp"

#include <cmath>
#include <stdexcept>

namespace treecrf {

namespace {

constexpr double kLeakySlope = 0.1;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Matrix leaky_relu(const Matrix& x) {
    return x.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
}

Matrix leaky_relu_grad(const Matrix& pre, const Matrix& d_out) {
    return (d_out.array() * pre.unaryExpr([](double v) { return v > 0.0 ? 1.0 : kLeakySlope; }).array())
        .matrix();
}

// Generic walk over the trainable arrays; field order is the contract for
// param_refs, so the optimizer, serializer and gradient buffers agree.
template <typename S, typename Fn>
void visit_arrays(S& s, Fn&& fn) {
    fn("word_emb", s.word_emb);
    fn("char_emb", s.char_emb);
    fn("char_fwd.w_ih", s.char_fwd.w_ih);
    fn("char_fwd.w_hh", s.char_fwd.w_hh);
    fn("char_fwd.bias", s.char_fwd.bias);
    fn("char_bwd.w_ih", s.char_bwd.w_ih);
    fn("char_bwd.w_hh", s.char_bwd.w_hh);
    fn("char_bwd.bias", s.char_bwd.bias);
    for (std::size_t l = 0; l < s.context.size(); ++l) {
        std::string p = "context." + std::to_string(l);
        fn(p + ".w_ih", s.context[l].w_ih);
        fn(p + ".w_hh", s.context[l].w_hh);
        fn(p + ".bias", s.context[l].bias);
    }
    fn("span_left.w", s.span_left.w);
    fn("span_left.b", s.span_left.b);
    fn("span_right.w", s.span_right.w);
    fn("span_right.b", s.span_right.b);
    fn("label_left.w", s.label_left.w);
    fn("label_left.b", s.label_left.b);
    fn("label_right.w", s.label_right.w);
    fn("label_right.b", s.label_right.b);
    fn("span_biaffine", s.span_biaffine);
    for (std::size_t l = 0; l < s.label_biaffine.size(); ++l)
        fn("label_biaffine." + std::to_string(l), s.label_biaffine[l]);
    fn("minus_hidden.w", s.minus_hidden.w);
    fn("minus_hidden.b", s.minus_hidden.b);
    fn("minus_out.w", s.minus_out.w);
    fn("minus_out.b", s.minus_out.b);
}

template <typename A, typename B, typename Fn>
void visit_array_pairs(A& a, B& b, Fn&& fn) {
    fn(a.word_emb, b.word_emb);
    fn(a.char_emb, b.char_emb);
    fn(a.char_fwd.w_ih, b.char_fwd.w_ih);
    fn(a.char_fwd.w_hh, b.char_fwd.w_hh);
    fn(a.char_fwd.bias, b.char_fwd.bias);
    fn(a.char_bwd.w_ih, b.char_bwd.w_ih);
    fn(a.char_bwd.w_hh, b.char_bwd.w_hh);
    fn(a.char_bwd.bias, b.char_bwd.bias);
    for (std::size_t l = 0; l < a.context.size(); ++l) {
        fn(a.context[l].w_ih, b.context[l].w_ih);
        fn(a.context[l].w_hh, b.context[l].w_hh);
        fn(a.context[l].bias, b.context[l].bias);
    }
    fn(a.span_left.w, b.span_left.w);
    fn(a.span_left.b, b.span_left.b);
    fn(a.span_right.w, b.span_right.w);
    fn(a.span_right.b, b.span_right.b);
    fn(a.label_left.w, b.label_left.w);
    fn(a.label_left.b, b.label_left.b);
    fn(a.label_right.w, b.label_right.w);
    fn(a.label_right.b, b.label_right.b);
    fn(a.span_biaffine, b.span_biaffine);
    for (std::size_t l = 0; l < a.label_biaffine.size(); ++l)
        fn(a.label_biaffine[l], b.label_biaffine[l]);
    fn(a.minus_hidden.w, b.minus_hidden.w);
    fn(a.minus_hidden.b, b.minus_hidden.b);
    fn(a.minus_out.w, b.minus_out.w);
    fn(a.minus_out.b, b.minus_out.b);
}

Matrix uniform_matrix(int rows, int cols, double fan_in, std::mt19937_64& rng) {
    double a = std::sqrt(3.0 / fan_in);
    std::uniform_real_distribution<double> dist(-a, a);
    Matrix m(rows, cols);
    for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r) m(r, c) = dist(rng);
    return m;
}

// Semi-orthogonal matrix (orthonormal rows or columns, whichever fit).
Matrix orthogonal_matrix(int rows, int cols, std::mt19937_64& rng) {
    int m = std::max(rows, cols), n = std::min(rows, cols);
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix a(m, n);
    for (int c = 0; c < n; ++c)
        for (int r = 0; r < m; ++r) a(r, c) = dist(rng);
    Eigen::HouseholderQR<Matrix> qr(a);
    Matrix q = qr.householderQ() * Matrix::Identity(m, n);
    Matrix r = qr.matrixQR().topRows(n).template triangularView<Eigen::Upper>();
    for (int c = 0; c < n; ++c)
        if (r(c, c) < 0) q.col(c) = -q.col(c);
    if (rows >= cols) return q;
    return q.transpose();
}

LstmWeights init_lstm(int input, int hidden, std::mt19937_64& rng) {
    LstmWeights w;
    w.w_ih.resize(4 * hidden, input);
    w.w_hh.resize(4 * hidden, hidden);
    for (int g = 0; g < 4; ++g) {
        w.w_ih.middleRows(g * hidden, hidden) = orthogonal_matrix(hidden, input, rng);
        w.w_hh.middleRows(g * hidden, hidden) = orthogonal_matrix(hidden, hidden, rng);
    }
    w.bias = Vector::Zero(4 * hidden);
    return w;
}

Mlp init_mlp(int out, int in, std::mt19937_64& rng) {
    Mlp m;
    m.w = uniform_matrix(out, in, in, rng);
    m.b = Vector::Zero(out);
    return m;
}

Vector bernoulli_mask(int size, double drop, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    Vector mask(size);
    double scale = 1.0 / (1.0 - drop);
    for (int i = 0; i < size; ++i) mask[i] = dist(rng) < drop ? 0.0 : scale;
    return mask;
}

// One LSTM direction over the columns of `inputs`, recording everything the
// backward pass needs. Masks are applied to inputs and to the recurrent
// state at every timestep.
void lstm_forward(const LstmWeights& w, const Matrix& inputs, const Vector* mask_in,
                  const Vector* mask_h, LstmTape& tape) {
    const int T = static_cast<int>(inputs.cols());
    const int H = static_cast<int>(w.w_hh.cols());
    tape.x = inputs;
    if (mask_in) tape.x = (tape.x.array().colwise() * mask_in->array()).matrix();
    tape.gi.resize(H, T);
    tape.gf.resize(H, T);
    tape.gg.resize(H, T);
    tape.go.resize(H, T);
    tape.c.resize(H, T);
    tape.h.resize(H, T);
    tape.mask_in = mask_in ? *mask_in : Vector();
    tape.mask_h = mask_h ? *mask_h : Vector();

    Matrix z_in = w.w_ih * tape.x;  // 4H x T, input contribution
    Vector h_prev = Vector::Zero(H);
    Vector c_prev = Vector::Zero(H);
    for (int t = 0; t < T; ++t) {
        Vector h_used = mask_h ? Vector(h_prev.array() * mask_h->array()) : h_prev;
        Vector z = z_in.col(t) + w.w_hh * h_used + w.bias;
        for (int k = 0; k < H; ++k) {
            tape.gi(k, t) = sigmoid(z[k]);
            tape.gf(k, t) = sigmoid(z[H + k]);
            tape.gg(k, t) = std::tanh(z[2 * H + k]);
            tape.go(k, t) = sigmoid(z[3 * H + k]);
        }
        tape.c.col(t) = tape.gf.col(t).cwiseProduct(c_prev) + tape.gi.col(t).cwiseProduct(tape.gg.col(t));
        tape.h.col(t) = tape.go.col(t).cwiseProduct(tape.c.col(t).array().tanh().matrix());
        h_prev = tape.h.col(t);
        c_prev = tape.c.col(t);
    }
}

// Backpropagation through time for one direction. d_h holds the adjoints of
// the emitted hidden states; returns adjoints of the raw (pre-mask) inputs.
Matrix lstm_backward(const LstmWeights& w, const LstmTape& tape, const Matrix& d_h,
                     LstmWeights& grad) {
    const int T = static_cast<int>(tape.x.cols());
    const int H = static_cast<int>(w.w_hh.cols());
    const bool has_mask_h = tape.mask_h.size() > 0;

    Matrix dz_all = Matrix::Zero(4 * H, T);
    Matrix h_used_prev = Matrix::Zero(H, T);  // masked h_{t-1} per step
    Vector dh_next = Vector::Zero(H);
    Vector dc_next = Vector::Zero(H);
    for (int t = T - 1; t >= 0; --t) {
        Vector dh = d_h.col(t) + dh_next;
        Vector tanh_c = tape.c.col(t).array().tanh().matrix();
        Vector dc = (dc_next.array() +
                     dh.array() * tape.go.col(t).array() * (1.0 - tanh_c.array().square()))
                        .matrix();
        Vector d_go = dh.cwiseProduct(tanh_c);
        Vector c_prev = t > 0 ? Vector(tape.c.col(t - 1)) : Vector(Vector::Zero(H));
        Vector d_gf = dc.cwiseProduct(c_prev);
        Vector d_gi = dc.cwiseProduct(tape.gg.col(t));
        Vector d_gg = dc.cwiseProduct(tape.gi.col(t));

        auto dz = dz_all.col(t);
        dz.segment(0, H) =
            (d_gi.array() * tape.gi.col(t).array() * (1.0 - tape.gi.col(t).array())).matrix();
        dz.segment(H, H) =
            (d_gf.array() * tape.gf.col(t).array() * (1.0 - tape.gf.col(t).array())).matrix();
        dz.segment(2 * H, H) = (d_gg.array() * (1.0 - tape.gg.col(t).array().square())).matrix();
        dz.segment(3 * H, H) =
            (d_go.array() * tape.go.col(t).array() * (1.0 - tape.go.col(t).array())).matrix();

        if (t > 0) {
            Vector h_prev = tape.h.col(t - 1);
            h_used_prev.col(t) =
                has_mask_h ? Vector(h_prev.array() * tape.mask_h.array()) : h_prev;
        }
        Vector dh_prev = w.w_hh.transpose() * Vector(dz);
        if (has_mask_h) dh_prev = dh_prev.cwiseProduct(tape.mask_h);
        dh_next = dh_prev;
        dc_next = dc.cwiseProduct(tape.gf.col(t));
    }
    grad.w_ih.noalias() += dz_all * tape.x.transpose();
    grad.w_hh.noalias() += dz_all * h_used_prev.transpose();
    grad.bias += dz_all.rowwise().sum();
    Matrix d_inputs = w.w_ih.transpose() * dz_all;
    if (tape.mask_in.size() > 0)
        d_inputs = (d_inputs.array().colwise() * tape.mask_in.array()).matrix();
    return d_inputs;
}

Matrix reverse_cols(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.col(c) = m.col(m.cols() - 1 - c);
    return out;
}

// Character BiLSTM for one word; the representation is the concatenation of
// the two final states.
Vector char_rep_forward(const ModelParams& params, const std::vector<int>& ids, LstmTape& fwd,
                        LstmTape& bwd) {
    const int m = static_cast<int>(ids.size());
    Matrix inputs(params.config.char_dim, m);
    for (int t = 0; t < m; ++t) inputs.col(t) = params.char_emb.row(ids[t]).transpose();
    lstm_forward(params.char_fwd, inputs, nullptr, nullptr, fwd);
    lstm_forward(params.char_bwd, reverse_cols(inputs), nullptr, nullptr, bwd);
    Vector rep(2 * params.config.char_hidden);
    rep.head(params.config.char_hidden) = fwd.h.col(m - 1);
    rep.tail(params.config.char_hidden) = bwd.h.col(m - 1);
    return rep;
}

void char_rep_backward(const ModelParams& params, const std::vector<int>& ids, const LstmTape& fwd,
                       const LstmTape& bwd, const Vector& d_rep, Gradients& grads) {
    const int m = static_cast<int>(ids.size());
    const int H = params.config.char_hidden;
    Matrix d_fwd_h = Matrix::Zero(H, m);
    Matrix d_bwd_h = Matrix::Zero(H, m);
    d_fwd_h.col(m - 1) = d_rep.head(H);
    d_bwd_h.col(m - 1) = d_rep.tail(H);
    Matrix d_in_fwd = lstm_backward(params.char_fwd, fwd, d_fwd_h, grads.char_fwd);
    Matrix d_in_bwd = lstm_backward(params.char_bwd, bwd, d_bwd_h, grads.char_bwd);
    Matrix d_inputs = d_in_fwd + reverse_cols(d_in_bwd);
    for (int t = 0; t < m; ++t) grads.char_emb.row(ids[t]) += d_inputs.col(t).transpose();
}

std::vector<int> lookup_chars(const CharVocab& vocab, const std::string& word) {
    std::vector<std::uint32_t> cps = utf8_codepoints(word);
    if (cps.empty()) throw std::invalid_argument("char_encode: empty word");
    std::vector<int> ids;
    ids.reserve(cps.size());
    for (std::uint32_t cp : cps) ids.push_back(vocab.find(cp));
    return ids;
}

Matrix mlp_forward(const Mlp& mlp, const Matrix& h, Matrix& pre) {
    pre = (mlp.w * h).colwise() + mlp.b;
    return leaky_relu(pre);
}

void mlp_backward(const Mlp& mlp, const Matrix& h, const Matrix& pre, const Matrix& d_out,
                  Mlp& grad, Matrix& d_h) {
    Matrix d_pre = leaky_relu_grad(pre, d_out);
    grad.w.noalias() += d_pre * h.transpose();
    grad.b += d_pre.rowwise().sum();
    d_h.noalias() += mlp.w.transpose() * d_pre;
}

Matrix augment_ones(const Matrix& reps) {
    Matrix out(reps.rows() + 1, reps.cols());
    out.topRows(reps.rows()) = reps;
    out.row(reps.rows()).setOnes();
    return out;
}

Matrix biaffine_forward(const Matrix& w, const Matrix& left, const Matrix& right) {
    Matrix left_aug = augment_ones(left);
    return left_aug.transpose() * w * right;
}

void biaffine_backward(const Matrix& w, const Matrix& left, const Matrix& right, const Matrix& d_s,
                       Matrix& grad_w, Matrix& d_left, Matrix& d_right) {
    Matrix left_aug = augment_ones(left);
    grad_w.noalias() += left_aug * d_s * right.transpose();
    Matrix d_left_aug = (w * right) * d_s.transpose();
    d_left.noalias() += d_left_aug.topRows(left.rows());
    d_right.noalias() += (w.transpose() * left_aug) * d_s;
}

std::size_t pair_index(int i, int j, int n) { return std::size_t(i) * n + j; }

Matrix minus_forward(const ModelParams& params, const Matrix& h, Matrix& pre) {
    const int n = static_cast<int>(h.cols());
    const int hid = static_cast<int>(params.minus_hidden.w.rows());
    pre = Matrix::Zero(hid, std::size_t(n) * n);
    Matrix scores = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            Vector u = h.col(i) - h.col(j);
            Vector p = params.minus_hidden.w * u + params.minus_hidden.b;
            pre.col(pair_index(i, j, n)) = p;
            Vector a = p.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
            scores(i, j) = (params.minus_out.w * a)(0, 0) + params.minus_out.b[0];
        }
    return scores;
}

void minus_backward(const ModelParams& params, const Matrix& h, const Matrix& pre,
                    const Matrix& d_s, Gradients& grads, Matrix& d_h) {
    const int n = static_cast<int>(h.cols());
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            double g = d_s(i, j);
            if (g == 0.0) continue;
            Vector p = pre.col(pair_index(i, j, n));
            Vector a = p.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
            grads.minus_out.w += g * a.transpose();
            grads.minus_out.b[0] += g;
            Vector da = params.minus_out.w.transpose() * g;
            Vector dp = (da.array() *
                         p.unaryExpr([](double v) { return v > 0.0 ? 1.0 : kLeakySlope; }).array())
                            .matrix();
            Vector u = h.col(i) - h.col(j);
            grads.minus_hidden.w.noalias() += dp * u.transpose();
            grads.minus_hidden.b += dp;
            Vector du = params.minus_hidden.w.transpose() * dp;
            d_h.col(i) += du;
            d_h.col(j) -= du;
        }
}

// Boundary states h_i = f_i ++ b_{i+1}; b_n is the initial backward state
// (zero). With no context layers the inputs stand in for f and b.
Matrix compose_fenceposts(const Matrix& fwd_h, const Matrix& bwd_h_by_pos) {
    const int n = static_cast<int>(fwd_h.cols());
    const int top = static_cast<int>(fwd_h.rows());
    const int bot = static_cast<int>(bwd_h_by_pos.rows());
    Matrix h = Matrix::Zero(top + bot, n);
    for (int i = 0; i < n; ++i) {
        h.col(i).head(top) = fwd_h.col(i);
        if (i + 1 < n) h.col(i).tail(bot) = bwd_h_by_pos.col(i + 1);
    }
    return h;
}

struct EncoderOut {
    Matrix h;  // boundary states, context_dim x n
};

EncoderOut encoder_forward(const ModelParams& params, const Matrix& inputs, bool train_mode,
                           std::mt19937_64* rng, SentenceTape* tape) {
    const ScorerConfig& cfg = params.config;
    const int n = static_cast<int>(inputs.cols());
    EncoderOut out;
    if (cfg.lstm_layers == 0) {
        out.h = compose_fenceposts(inputs, inputs);
        return out;
    }
    bool use_dropout = train_mode && cfg.lstm_dropout > 0.0 && rng;
    std::vector<LstmTape> local;
    std::vector<LstmTape>& tapes = tape ? tape->layers : local;
    tapes.assign(2 * cfg.lstm_layers, LstmTape{});
    Matrix layer_in = inputs;
    for (int l = 0; l < cfg.lstm_layers; ++l) {
        LstmTape& fwd = tapes[2 * l];
        LstmTape& bwd = tapes[2 * l + 1];
        Vector mask_in_f, mask_h_f, mask_in_b, mask_h_b;
        if (use_dropout) {
            mask_in_f = bernoulli_mask(static_cast<int>(layer_in.rows()), cfg.lstm_dropout, *rng);
            mask_h_f = bernoulli_mask(cfg.lstm_hidden, cfg.lstm_dropout, *rng);
            mask_in_b = bernoulli_mask(static_cast<int>(layer_in.rows()), cfg.lstm_dropout, *rng);
            mask_h_b = bernoulli_mask(cfg.lstm_hidden, cfg.lstm_dropout, *rng);
        }
        lstm_forward(params.context[2 * l], layer_in, use_dropout ? &mask_in_f : nullptr,
                     use_dropout ? &mask_h_f : nullptr, fwd);
        lstm_forward(params.context[2 * l + 1], reverse_cols(layer_in),
                     use_dropout ? &mask_in_b : nullptr, use_dropout ? &mask_h_b : nullptr, bwd);
        Matrix next(2 * cfg.lstm_hidden, n);
        next.topRows(cfg.lstm_hidden) = fwd.h;
        next.bottomRows(cfg.lstm_hidden) = reverse_cols(bwd.h);
        layer_in = std::move(next);
    }
    const LstmTape& top_fwd = tapes[2 * cfg.lstm_layers - 2];
    const LstmTape& top_bwd = tapes[2 * cfg.lstm_layers - 1];
    out.h = compose_fenceposts(top_fwd.h, reverse_cols(top_bwd.h));
    return out;
}

// d_h: boundary-state adjoints. Returns adjoints of the encoder inputs.
Matrix encoder_backward(const ModelParams& params, const SentenceTape& tape, const Matrix& d_h,
                        Gradients& grads) {
    const ScorerConfig& cfg = params.config;
    const int n = static_cast<int>(d_h.cols());
    if (cfg.lstm_layers == 0) {
        const int in_dim = cfg.input_dim();
        Matrix d_inputs = Matrix::Zero(in_dim, n);
        for (int i = 0; i < n; ++i) {
            d_inputs.col(i) += d_h.col(i).head(in_dim);
            if (i + 1 < n) d_inputs.col(i + 1) += d_h.col(i).tail(in_dim);
        }
        return d_inputs;
    }
    const int H = cfg.lstm_hidden;
    Matrix d_fwd_h = Matrix::Zero(H, n);
    Matrix d_bwd_pos = Matrix::Zero(H, n);
    for (int i = 0; i < n; ++i) {
        d_fwd_h.col(i) += d_h.col(i).head(H);
        if (i + 1 < n) d_bwd_pos.col(i + 1) += d_h.col(i).tail(H);
    }
    for (int l = cfg.lstm_layers - 1; l >= 0; --l) {
        Matrix d_in_fwd =
            lstm_backward(params.context[2 * l], tape.layers[2 * l], d_fwd_h, grads.context[2 * l]);
        Matrix d_in_bwd = lstm_backward(params.context[2 * l + 1], tape.layers[2 * l + 1],
                                        reverse_cols(d_bwd_pos), grads.context[2 * l + 1]);
        Matrix d_layer_in = d_in_fwd + reverse_cols(d_in_bwd);
        if (l == 0) return d_layer_in;
        d_fwd_h = d_layer_in.topRows(H);
        d_bwd_pos = d_layer_in.bottomRows(H);
    }
    return {};
}

}  // namespace

int WordVocab::add(const std::string& w) {
    auto it = index.find(w);
    if (it != index.end()) return it->second;
    int id = static_cast<int>(words.size());
    words.push_back(w);
    index.emplace(w, id);
    return id;
}

int WordVocab::find(const std::string& w) const {
    auto it = index.find(w);
    return it == index.end() ? kUnk : it->second;
}

int CharVocab::add(std::uint32_t cp) {
    auto it = index.find(cp);
    if (it != index.end()) return it->second;
    int id = static_cast<int>(chars.size());
    chars.push_back(cp);
    index.emplace(cp, id);
    return id;
}

int CharVocab::find(std::uint32_t cp) const {
    auto it = index.find(cp);
    return it == index.end() ? kUnk : it->second;
}

std::vector<std::uint32_t> utf8_codepoints(const std::string& s) {
    std::vector<std::uint32_t> out;
    std::size_t i = 0;
    while (i < s.size()) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        std::uint32_t cp = 0xFFFD;
        std::size_t len = 1;
        if (c < 0x80) {
            cp = c;
        } else if ((c >> 5) == 0x6 && i + 1 < s.size()) {
            cp = ((c & 0x1F) << 6) | (s[i + 1] & 0x3F);
            len = 2;
        } else if ((c >> 4) == 0xE && i + 2 < s.size()) {
            cp = ((c & 0x0F) << 12) | ((s[i + 1] & 0x3F) << 6) | (s[i + 2] & 0x3F);
            len = 3;
        } else if ((c >> 3) == 0x1E && i + 3 < s.size()) {
            cp = ((c & 0x07) << 18) | ((s[i + 1] & 0x3F) << 12) | ((s[i + 2] & 0x3F) << 6) |
                 (s[i + 3] & 0x3F);
            len = 4;
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

std::vector<ParamRef> param_refs(ModelParams& params) {
    std::vector<ParamRef> refs;
    visit_arrays(params, [&](const std::string& name, auto& m) {
        refs.push_back(ParamRef{name, m.data(), m.rows(), m.cols()});
    });
    return refs;
}

std::vector<ParamRef> param_refs(Gradients& grads) {
    std::vector<ParamRef> refs;
    visit_arrays(grads, [&](const std::string& name, auto& m) {
        refs.push_back(ParamRef{name, m.data(), m.rows(), m.cols()});
    });
    return refs;
}

void Gradients::add(const Gradients& other) {
    visit_array_pairs(*this, const_cast<Gradients&>(other), [](auto& dst, auto& src) { dst += src; });
}

void Gradients::set_zero() {
    visit_arrays(*this, [](const std::string&, auto& m) { m.setZero(); });
}

ModelParams init_params(const ScorerConfig& config, WordVocab words, CharVocab chars,
                        LabelVocab labels, std::mt19937_64& rng) {
    ModelParams p;
    p.config = config;
    p.words = std::move(words);
    p.chars = std::move(chars);
    p.labels = std::move(labels);

    p.word_emb = uniform_matrix(p.words.size(), config.word_dim, config.word_dim, rng);
    p.word_emb.row(WordVocab::kPad).setZero();
    p.char_emb = uniform_matrix(p.chars.size(), config.char_dim, config.char_dim, rng);
    p.char_emb.row(CharVocab::kPad).setZero();
    p.char_fwd = init_lstm(config.char_dim, config.char_hidden, rng);
    p.char_bwd = init_lstm(config.char_dim, config.char_hidden, rng);
    for (int l = 0; l < config.lstm_layers; ++l) {
        int in = l == 0 ? config.input_dim() : 2 * config.lstm_hidden;
        p.context.push_back(init_lstm(in, config.lstm_hidden, rng));
        p.context.push_back(init_lstm(in, config.lstm_hidden, rng));
    }
    int ctx = config.context_dim();
    p.span_left = init_mlp(config.mlp_span_dim, ctx, rng);
    p.span_right = init_mlp(config.mlp_span_dim, ctx, rng);
    p.label_left = init_mlp(config.mlp_label_dim, ctx, rng);
    p.label_right = init_mlp(config.mlp_label_dim, ctx, rng);
    p.span_biaffine =
        uniform_matrix(config.mlp_span_dim + 1, config.mlp_span_dim, config.mlp_span_dim + 1, rng);
    for (int l = 0; l < p.labels.size(); ++l)
        p.label_biaffine.push_back(uniform_matrix(config.mlp_label_dim + 1, config.mlp_label_dim,
                                                  config.mlp_label_dim + 1, rng));
    p.minus_hidden = init_mlp(config.minus_hidden_dim, ctx, rng);
    p.minus_out.w = uniform_matrix(1, config.minus_hidden_dim, config.minus_hidden_dim, rng);
    p.minus_out.b = Vector::Zero(1);
    return p;
}

Gradients zero_grads(const ModelParams& params) {
    Gradients g;
    g.context.resize(params.context.size());
    g.label_biaffine.resize(params.label_biaffine.size());
    visit_array_pairs(g, const_cast<ModelParams&>(params),
                      [](auto& dst, auto& src) { dst.setZero(src.rows(), src.cols()); });
    return g;
}

void build_vocabs(const std::vector<std::vector<std::string>>& sentences, WordVocab& words,
                  CharVocab& chars) {
    for (const auto& sent : sentences)
        for (const std::string& w : sent) {
            words.add(w);
            for (std::uint32_t cp : utf8_codepoints(w)) chars.add(cp);
        }
}

Vector char_encode(const ModelParams& params, const std::string& word) {
    std::vector<int> ids = lookup_chars(params.chars, word);
    LstmTape fwd, bwd;
    return char_rep_forward(params, ids, fwd, bwd);
}

Matrix embed(const ModelParams& params, const std::vector<std::string>& tokens, bool train_mode,
             std::mt19937_64* rng) {
    const ScorerConfig& cfg = params.config;
    const int n = static_cast<int>(tokens.size());
    if (n == 0) throw std::invalid_argument("embed: empty sentence");
    bool emb_drop = train_mode && cfg.emb_dropout > 0.0 && rng;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Matrix out(cfg.input_dim(), n);
    for (int i = 0; i < n; ++i) {
        Vector rep = char_encode(params, tokens[i]);
        double ws = 1.0, cs = 1.0;
        if (emb_drop) {
            bool keep_word = unit(*rng) >= cfg.emb_dropout;
            bool keep_char = unit(*rng) >= cfg.emb_dropout;
            ws = keep_word ? (keep_char ? 1.0 : 2.0) : 0.0;
            cs = keep_char ? (keep_word ? 1.0 : 2.0) : 0.0;
        }
        out.col(i).head(cfg.word_dim) =
            ws * params.word_emb.row(params.words.find(tokens[i])).transpose();
        out.col(i).tail(2 * cfg.char_hidden) = cs * rep;
    }
    return out;
}

Matrix encode_context(const ModelParams& params, const Matrix& inputs, bool train_mode,
                      std::mt19937_64* rng) {
    if (inputs.cols() == 0) throw std::invalid_argument("encode_context: empty input");
    return encoder_forward(params, inputs, train_mode, rng, nullptr).h;
}

BoundaryReps boundary_project(const ModelParams& params, const Matrix& h) {
    BoundaryReps reps;
    Matrix pre;
    reps.span_left = mlp_forward(params.span_left, h, pre);
    reps.span_right = mlp_forward(params.span_right, h, pre);
    reps.label_left = mlp_forward(params.label_left, h, pre);
    reps.label_right = mlp_forward(params.label_right, h, pre);
    return reps;
}

Matrix span_scores(const ModelParams& params, const BoundaryReps& reps) {
    return biaffine_forward(params.span_biaffine, reps.span_left, reps.span_right);
}

std::vector<Matrix> label_scores(const ModelParams& params, const BoundaryReps& reps) {
    std::vector<Matrix> out;
    out.reserve(params.label_biaffine.size());
    for (const Matrix& w : params.label_biaffine)
        out.push_back(biaffine_forward(w, reps.label_left, reps.label_right));
    return out;
}

Matrix minus_span_scores(const ModelParams& params, const Matrix& h) {
    Matrix pre;
    return minus_forward(params, h, pre);
}

SentenceScores score_sentence(const ModelParams& params, const std::vector<std::string>& tokens,
                              bool train_mode, std::mt19937_64* rng, SentenceTape* tape,
                              const std::vector<int>* word_id_override) {
    const ScorerConfig& cfg = params.config;
    const int n = static_cast<int>(tokens.size());
    if (n == 0) throw std::invalid_argument("score_sentence: empty sentence");

    SentenceTape local;
    SentenceTape& t = tape ? *tape : local;
    t = SentenceTape{};
    t.train_mode = train_mode;

    if (word_id_override) {
        if (static_cast<int>(word_id_override->size()) != n)
            throw std::invalid_argument("score_sentence: word id override length mismatch");
        t.word_ids = *word_id_override;
    } else {
        t.word_ids.reserve(n);
        for (const std::string& w : tokens) t.word_ids.push_back(params.words.find(w));
    }
    t.char_ids.resize(n);
    t.char_tapes.assign(2 * n, LstmTape{});

    // Input representation: word embedding over the char representation,
    // each half dropped whole; a lone survivor is doubled.
    bool emb_drop = train_mode && cfg.emb_dropout > 0.0 && rng;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    t.word_scale.assign(n, 1.0);
    t.char_scale.assign(n, 1.0);
    t.embed.resize(cfg.input_dim(), n);
    for (int i = 0; i < n; ++i) {
        t.char_ids[i] = lookup_chars(params.chars, tokens[i]);
        Vector rep = char_rep_forward(params, t.char_ids[i], t.char_tapes[2 * i],
                                      t.char_tapes[2 * i + 1]);
        if (emb_drop) {
            bool keep_word = unit(*rng) >= cfg.emb_dropout;
            bool keep_char = unit(*rng) >= cfg.emb_dropout;
            t.word_scale[i] = keep_word ? (keep_char ? 1.0 : 2.0) : 0.0;
            t.char_scale[i] = keep_char ? (keep_word ? 1.0 : 2.0) : 0.0;
        }
        t.embed.col(i).head(cfg.word_dim) =
            t.word_scale[i] * params.word_emb.row(t.word_ids[i]).transpose();
        t.embed.col(i).tail(2 * cfg.char_hidden) = t.char_scale[i] * rep;
    }

    t.h = encoder_forward(params, t.embed, train_mode, rng, &t).h;

    SentenceScores scores;
    t.label_left = mlp_forward(params.label_left, t.h, t.label_left_pre);
    t.label_right = mlp_forward(params.label_right, t.h, t.label_right_pre);
    scores.label.reserve(params.label_biaffine.size());
    for (const Matrix& w : params.label_biaffine)
        scores.label.push_back(biaffine_forward(w, t.label_left, t.label_right));

    if (cfg.minus_features) {
        scores.span = minus_forward(params, t.h, t.minus_pre);
    } else {
        t.span_left = mlp_forward(params.span_left, t.h, t.span_left_pre);
        t.span_right = mlp_forward(params.span_right, t.h, t.span_right_pre);
        scores.span = biaffine_forward(params.span_biaffine, t.span_left, t.span_right);
    }
    t.recorded = true;
    return scores;
}

void scorer_backward(const ModelParams& params, const SentenceTape& tape, const Matrix* d_span,
                     const std::vector<Matrix>* d_label, Gradients& grads) {
    if (!tape.recorded) throw std::logic_error("scorer_backward: no recorded forward pass");
    const ScorerConfig& cfg = params.config;
    const int n = static_cast<int>(tape.embed.cols());
    Matrix d_h = Matrix::Zero(tape.h.rows(), n);

    if (d_label) {
        if (static_cast<int>(d_label->size()) != static_cast<int>(params.label_biaffine.size()))
            throw std::invalid_argument("scorer_backward: label adjoint count mismatch");
        Matrix d_left = Matrix::Zero(cfg.mlp_label_dim, n);
        Matrix d_right = Matrix::Zero(cfg.mlp_label_dim, n);
        for (std::size_t l = 0; l < params.label_biaffine.size(); ++l)
            biaffine_backward(params.label_biaffine[l], tape.label_left, tape.label_right,
                              (*d_label)[l], grads.label_biaffine[l], d_left, d_right);
        mlp_backward(params.label_left, tape.h, tape.label_left_pre, d_left, grads.label_left, d_h);
        mlp_backward(params.label_right, tape.h, tape.label_right_pre, d_right, grads.label_right,
                     d_h);
    }

    if (d_span) {
        if (cfg.minus_features) {
            minus_backward(params, tape.h, tape.minus_pre, *d_span, grads, d_h);
        } else {
            Matrix d_left = Matrix::Zero(cfg.mlp_span_dim, n);
            Matrix d_right = Matrix::Zero(cfg.mlp_span_dim, n);
            biaffine_backward(params.span_biaffine, tape.span_left, tape.span_right, *d_span,
                              grads.span_biaffine, d_left, d_right);
            mlp_backward(params.span_left, tape.h, tape.span_left_pre, d_left, grads.span_left, d_h);
            mlp_backward(params.span_right, tape.h, tape.span_right_pre, d_right, grads.span_right,
                         d_h);
        }
    }

    Matrix d_embed = encoder_backward(params, tape, d_h, grads);

    for (int i = 0; i < n; ++i) {
        if (tape.word_scale[i] != 0.0)
            grads.word_emb.row(tape.word_ids[i]) +=
                tape.word_scale[i] * d_embed.col(i).head(cfg.word_dim).transpose();
        if (tape.char_scale[i] != 0.0) {
            Vector d_rep = tape.char_scale[i] * d_embed.col(i).tail(2 * cfg.char_hidden);
            char_rep_backward(params, tape.char_ids[i], tape.char_tapes[2 * i],
                              tape.char_tapes[2 * i + 1], d_rep, grads);
        }
    }
}

}  // namespace treecrf
