#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "platoon/bargaining.hpp"
#include "oracles.hpp"

using namespace platoon;

namespace {

AgentContext make_agent(int id, const oracle::BenchRow& row, HorizonSpec h,
                        double u_max, int source, std::vector<int> scope) {
  AgentContext a;
  a.id = id;
  a.model = discretize_zoh(make_continuous_model({row.a1, row.a2, row.b}),
                           0.1);
  a.po = build_prediction(a.model, h);
  a.weights = CostWeights::defaults(h.Nu);
  a.box = BoxConstraint::symmetric(h.Nu, u_max);
  a.source = source;
  a.scope = std::move(scope);
  return a;
}

Snapshot make_snapshot(const std::vector<AgentContext>& agents,
                       const std::vector<VehicleState>& x, double margin) {
  Snapshot snap;
  snap.x = x;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const auto st = init_bargain(agents[i], x[i], margin);
    snap.beta.push_back(st.beta);
    snap.plan.push_back(st.plan);
  }
  return snap;
}

GameConfig basic_config(int n) {
  GameConfig cfg;
  validate(cfg, n);
  return cfg;
}

}  // namespace

TEST_CASE("game config validation", "[bargaining]") {
  GameConfig cfg;
  cfg.mu = 1.5;
  CHECK_THROWS_AS(validate(cfg, 2), ConfigError);
  cfg.mu = 0.3;
  cfg.delta_sync = 0.0;
  CHECK_THROWS_AS(validate(cfg, 2), ConfigError);
  cfg.delta_sync = 0.01;
  cfg.lambda = {0.4, 0.4};  // does not sum to 1
  CHECK_THROWS_AS(validate(cfg, 2), ConfigError);
  cfg.lambda = {0.5, 0.5, 0.5};  // wrong count (and wrong sum)
  CHECK_THROWS_AS(validate(cfg, 2), ConfigError);
  cfg.lambda.clear();
  validate(cfg, 4);
  REQUIRE(cfg.lambda.size() == 4);
  CHECK(cfg.lambda[0] == Catch::Approx(0.25));
}

TEST_CASE("tracked output weighs spacing only for followers", "[bargaining]") {
  auto leader = make_agent(0, oracle::kSevenVehicleSet[0], {4, 2}, 5.0, -1,
                           {0});
  auto follower = make_agent(1, oracle::kSevenVehicleSet[1], {4, 2}, 5.0, 0,
                             {0, 1});
  const Eigen::RowVector2d lr = tracked_output_row(leader, 0.5);
  const Eigen::RowVector2d fr = tracked_output_row(follower, 0.5);
  CHECK(lr(0) == 0.0);
  CHECK(lr(1) == 1.0);
  CHECK(fr(0) == 0.5);
  CHECK(fr(1) == 1.0);
}

TEST_CASE("initial disagreement point sits one margin above the zero plan",
          "[bargaining]") {
  auto a = make_agent(0, oracle::kSevenVehicleSet[2], {10, 5}, 5.0, -1, {0});

  // Zero state: the zero plan costs nothing, so beta is just the margin.
  const auto st0 = init_bargain(a, {0.0, 0.0}, 1.0);
  CHECK(st0.psi_last == 0.0);
  CHECK(st0.beta == Catch::Approx(1.0));
  CHECK(st0.plan.cwiseAbs().maxCoeff() == 0.0);

  // Third bench row at its tabulated start: beta equals an independently
  // evaluated zero-plan cost plus the margin.
  const VehicleState x{1.0, -0.2};
  const auto st = init_bargain(a, x, 1.0);
  const auto lc = lift_local_cost(a.weights, a.po, x);
  const double psi0 = local_cost(lc, Eigen::VectorXd::Zero(5));
  CHECK(st.beta == Catch::Approx(psi0 + 1.0));
  CHECK(st.psi_last == Catch::Approx(psi0));
  CHECK(st.zeta >= st.psi_last);

  // Margin zero leaves no room to negotiate.
  const auto tight = init_bargain(a, x, 0.0);
  CHECK(tight.beta == Catch::Approx(tight.psi_last));
}

TEST_CASE("disagreement point update", "[bargaining]") {
  CHECK(update_disagreement(10.0, 4.0, 0.1) == Catch::Approx(9.4));
  CHECK(update_disagreement(3.0, 5.0, 0.1) == 5.0);
  CHECK(update_disagreement(3.0, 5.0, 0.9) == 5.0);
  CHECK(update_disagreement(7.0, 7.0, 0.5) == 7.0);
}

TEST_CASE("disagreement point contracts geometrically under frozen cost",
          "[bargaining]") {
  const double psi = 0.5;
  const double mu = 0.3;
  double beta = 3.5;
  for (int k = 0; k < 20; ++k) {
    const double next = update_disagreement(beta, psi, mu);
    const double ratio = (next - psi) / (beta - psi);
    CHECK(std::abs(ratio - (1.0 - mu)) <= 1e-12);
    beta = next;
  }
  CHECK(beta > psi);
}

TEST_CASE("single agent negotiation matches a dense grid scan",
          "[bargaining]") {
  auto a = make_agent(0, oracle::kSevenVehicleSet[0], {4, 1}, 5.0, -1, {0});
  const GameConfig cfg = basic_config(1);
  const auto ref = ReferenceProfile::constant(1.0);
  Snapshot snap = make_snapshot({a}, {VehicleState{1.0, 0.3}}, 30.0);

  const auto res = distributed_step({a}, 0, snap, cfg, ref);
  REQUIRE(res.cooperated);

  const auto ev = build_agent_cost({a}, 0, VariableLayout::single(a), snap,
                                   ref, cfg);
  const CostFn fn = ev.as_cost_fn();
  const double beta = snap.beta[0];
  const double grid = oracle::grid_argmax_1d(
      [&](double u) {
        Eigen::VectorXd v(1);
        v << u;
        const double room = beta - fn.value(v);
        return room > 0.0 ? std::log(room)
                          : -std::numeric_limits<double>::infinity();
      },
      -5.0, 5.0, 1e-5);
  CHECK(res.plan(0) == Catch::Approx(grid).margin(1e-3));
}

TEST_CASE("identical agents produce identical plans", "[bargaining]") {
  // Two decoupled copies of the same agent: a fully symmetric game.
  auto a0 = make_agent(0, oracle::kSevenVehicleSet[3], {6, 3}, 5.0, -1, {0});
  auto a1 = make_agent(1, oracle::kSevenVehicleSet[3], {6, 3}, 5.0, -1, {1});
  const std::vector<AgentContext> agents{a0, a1};
  const GameConfig cfg = basic_config(2);
  const auto ref = ReferenceProfile::constant(0.8);
  const VehicleState x{1.5, 0.4};
  Snapshot snap = make_snapshot(agents, {x, x}, 25.0);

  const auto r0 = distributed_step(agents, 0, snap, cfg, ref);
  const auto r1 = distributed_step(agents, 1, snap, cfg, ref);
  REQUIRE(r0.cooperated);
  REQUIRE(r1.cooperated);
  CHECK((r0.plan - r1.plan).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("one round strictly improves each agent's bargaining objective",
          "[bargaining]") {
  // Three-vehicle chain on the four-vehicle bench rows.
  std::vector<AgentContext> agents{
      make_agent(0, oracle::kFourVehicleSet[0], {8, 4}, 10.0, -1, {0}),
      make_agent(1, oracle::kFourVehicleSet[1], {8, 4}, 10.0, 0, {0, 1}),
      make_agent(2, oracle::kFourVehicleSet[2], {8, 4}, 10.0, 1, {1, 2})};
  const GameConfig cfg = basic_config(3);
  const auto ref = ReferenceProfile::constant(0.5);
  Snapshot snap = make_snapshot(
      agents,
      {VehicleState{1.0, 2.0}, VehicleState{1.0, 4.0},
       VehicleState{-1.0, 2.0}},
      60.0);

  for (int i = 0; i < 3; ++i) {
    const auto res = distributed_step(agents, i, snap, cfg, ref);
    REQUIRE(res.cooperated);
    const auto layout = VariableLayout::single(agents[i]);
    const auto objective = [&](const Eigen::VectorXd& u) {
      double s = 0.0;
      for (int r : agents[i].scope) {
        const auto ev = build_agent_cost(agents, r, layout, snap, ref, cfg);
        const double room = snap.beta[r] - ev.value(u);
        REQUIRE(room > 0.0);
        s += std::log(room);
      }
      return s;
    };
    CHECK(objective(res.plan) > objective(snap.plan[i]));
  }
}

TEST_CASE("cooperative plans respect every constraint in scope",
          "[bargaining]") {
  std::vector<AgentContext> agents{
      make_agent(0, oracle::kFourVehicleSet[0], {6, 3}, 10.0, -1, {0}),
      make_agent(1, oracle::kFourVehicleSet[1], {6, 3}, 10.0, 0, {0, 1})};
  const GameConfig cfg = basic_config(2);
  const auto ref = ReferenceProfile::constant(0.5);
  Snapshot snap = make_snapshot(
      agents, {VehicleState{1.0, 2.0}, VehicleState{1.0, 4.0}}, 40.0);

  const auto res = distributed_step(agents, 1, snap, cfg, ref);
  REQUIRE(res.cooperated);
  const auto layout = VariableLayout::single(agents[1]);
  for (int r : agents[1].scope) {
    const auto ev = build_agent_cost(agents, r, layout, snap, ref, cfg);
    CHECK(ev.value(res.plan) <= snap.beta[r]);
  }
}

TEST_CASE("negotiation declines when no plan satisfies the constraints",
          "[bargaining]") {
  auto a = make_agent(0, oracle::kSevenVehicleSet[0], {4, 2}, 5.0, -1, {0});
  const GameConfig cfg = basic_config(1);
  const auto ref = ReferenceProfile::constant(1.0);
  Snapshot snap = make_snapshot({a}, {VehicleState{1.0, 0.3}}, 0.0);
  // Margin 0 pins beta at the zero-plan cost; the tracking term keeps every
  // candidate above it, so the agent must decline and keep its plan.
  snap.beta[0] = 0.0;
  const auto res = distributed_step({a}, 0, snap, cfg, ref);
  CHECK_FALSE(res.cooperated);
  CHECK(res.plan.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("joint bargaining treats identical decoupled agents alike",
          "[bargaining]") {
  auto a0 = make_agent(0, oracle::kSevenVehicleSet[5], {5, 2}, 5.0, -1, {0});
  auto a1 = make_agent(1, oracle::kSevenVehicleSet[5], {5, 2}, 5.0, -1, {1});
  const std::vector<AgentContext> agents{a0, a1};
  GameConfig cfg = basic_config(2);
  const auto ref = ReferenceProfile::constant(0.6);
  const VehicleState x{2.0, -0.5};
  Snapshot snap = make_snapshot(agents, {x, x}, 20.0);

  const auto res = centralized_bargain_step(agents, snap, cfg, ref);
  REQUIRE(res.cooperated);
  CHECK((res.plans[0] - res.plans[1]).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("joint bargaining matches a 2-D grid and follows the heavy weight",
          "[bargaining]") {
  auto a0 = make_agent(0, oracle::kSevenVehicleSet[0], {3, 1}, 2.0, -1, {0});
  auto a1 = make_agent(1, oracle::kSevenVehicleSet[1], {3, 1}, 2.0, -1, {1});
  const std::vector<AgentContext> agents{a0, a1};
  GameConfig cfg = basic_config(2);
  cfg.lambda = {0.99, 0.01};
  const auto ref = ReferenceProfile::constant(1.0);
  Snapshot snap = make_snapshot(
      agents, {VehicleState{1.0, 0.2}, VehicleState{0.5, 1.8}}, 15.0);

  const auto res = centralized_bargain_step(agents, snap, cfg, ref);
  REQUIRE(res.cooperated);

  const auto layout = VariableLayout::joint(agents);
  const auto e0 = build_agent_cost(agents, 0, layout, snap, ref, cfg);
  const auto e1 = build_agent_cost(agents, 1, layout, snap, ref, cfg);
  const CostFn f0 = e0.as_cost_fn();
  const CostFn f1 = e1.as_cost_fn();
  const auto obj = [&](const Eigen::Vector2d& u) {
    const double r0 = snap.beta[0] - f0.value(u);
    const double r1 = snap.beta[1] - f1.value(u);
    if (r0 <= 0.0 || r1 <= 0.0)
      return -std::numeric_limits<double>::infinity();
    return 0.99 * std::log(r0) + 0.01 * std::log(r1);
  };
  const Eigen::Vector2d grid =
      oracle::grid_argmax_2d(obj, {-2.0, -2.0}, {2.0, 2.0}, 1e-5);
  CHECK(res.plans[0](0) == Catch::Approx(grid(0)).margin(2e-3));
  CHECK(res.plans[1](0) == Catch::Approx(grid(1)).margin(2e-3));

  // In the lambda -> (1,0) limit agent 0 gets its unconstrained best: on a
  // decoupled instance its block maximizes its own surplus alone.
  const double own = oracle::grid_argmax_1d(
      [&](double u) {
        Eigen::Vector2d v(u, res.plans[1](0));
        const double room = snap.beta[0] - f0.value(v);
        return room > 0.0 ? std::log(room)
                          : -std::numeric_limits<double>::infinity();
      },
      -2.0, 2.0, 1e-5);
  CHECK(res.plans[0](0) == Catch::Approx(own).margin(2e-3));
}

TEST_CASE("distributed rounds settle onto the joint solution when decoupled",
          "[bargaining]") {
  std::vector<AgentContext> agents{
      make_agent(0, oracle::kSevenVehicleSet[0], {4, 2}, 2.0, -1, {0}),
      make_agent(1, oracle::kSevenVehicleSet[2], {4, 2}, 2.0, -1, {1})};
  GameConfig cfg = basic_config(2);
  const auto ref = ReferenceProfile::constant(2.5);
  Snapshot snap = make_snapshot(
      agents, {VehicleState{2.0, 1.0}, VehicleState{1.0, -0.2}}, 25.0);

  // Iterate the per-agent solves to a fixed point (betas frozen).
  for (int round = 0; round < 8; ++round) {
    std::vector<ControlPlan> next(2);
    for (int i = 0; i < 2; ++i) {
      const auto res = distributed_step(agents, i, snap, cfg, ref);
      REQUIRE(res.cooperated);
      next[i] = res.plan;
    }
    snap.plan = next;
  }

  const auto joint = centralized_bargain_step(agents, snap, cfg, ref);
  REQUIRE(joint.cooperated);
  for (int i = 0; i < 2; ++i)
    CHECK((snap.plan[i] - joint.plans[i]).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("plan is invariant under a common rescaling of the game",
          "[bargaining]") {
  // Scaling all cost weights and the disagreement point by c scales every
  // surplus by c and must leave the chosen plan untouched.
  auto base = make_agent(0, oracle::kSevenVehicleSet[4], {5, 3}, 5.0, -1,
                         {0});
  const GameConfig cfg = basic_config(1);
  const auto ref = ReferenceProfile::constant(0.9);
  Snapshot snap = make_snapshot({base}, {VehicleState{3.0, 0.6}}, 20.0);
  const auto plain = distributed_step({base}, 0, snap, cfg, ref);
  REQUIRE(plain.cooperated);

  const double c = 4.0;
  auto scaled = base;
  scaled.weights.Q_uu *= c;
  scaled.weights.Q_xu *= c;
  scaled.weights.Q_xx *= c;
  scaled.weights.lambda_v *= c;
  scaled.weights.rho_speed *= c;
  Snapshot ssnap = snap;
  ssnap.beta[0] *= c;
  const auto scaled_res = distributed_step({scaled}, 0, ssnap, cfg, ref);
  REQUIRE(scaled_res.cooperated);
  CHECK((plain.plan - scaled_res.plan).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("negotiated plan does not depend on the warm start", "[bargaining]") {
  std::vector<AgentContext> agents{
      make_agent(0, oracle::kFourVehicleSet[0], {6, 3}, 10.0, -1, {0}),
      make_agent(1, oracle::kFourVehicleSet[1], {6, 3}, 10.0, 0, {0, 1})};
  const GameConfig cfg = basic_config(2);
  const auto ref = ReferenceProfile::constant(0.5);
  Snapshot snap = make_snapshot(
      agents, {VehicleState{1.0, 2.0}, VehicleState{1.0, 4.0}}, 50.0);

  const auto first = distributed_step(agents, 1, snap, cfg, ref);
  REQUIRE(first.cooperated);
  Snapshot other = snap;
  other.plan[1] = Eigen::VectorXd::Constant(3, 1.5);
  const auto second = distributed_step(agents, 1, other, cfg, ref);
  REQUIRE(second.cooperated);
  CHECK((first.plan - second.plan).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("a full round keeps symmetric agents symmetric", "[bargaining]") {
  auto a0 = make_agent(0, oracle::kSevenVehicleSet[6], {5, 2}, 5.0, -1, {0});
  auto a1 = make_agent(1, oracle::kSevenVehicleSet[6], {5, 2}, 5.0, -1, {1});
  const std::vector<AgentContext> agents{a0, a1};
  GameConfig cfg = basic_config(2);
  const auto ref = ReferenceProfile::constant(0.4);
  const VehicleState x{1.0, 0.4};
  Snapshot snap = make_snapshot(agents, {x, x}, 15.0);

  std::vector<BargainState> states{init_bargain(a0, x, 15.0),
                                   init_bargain(a1, x, 15.0)};
  const auto round = bargaining_round(agents, states, snap, cfg, ref);
  CHECK(states[0].beta == Catch::Approx(states[1].beta));
  CHECK(round.outcome.cooperation_mask[0]);
  CHECK(round.outcome.cooperation_mask[1]);
  CHECK(round.outcome.xi[0] == Catch::Approx(round.psi[0]));
}

TEST_CASE("a round never drives the aggregate surplus negative",
          "[bargaining]") {
  std::vector<AgentContext> agents;
  std::vector<VehicleState> x;
  for (int i = 0; i < 4; ++i) {
    const auto& row = oracle::kFourVehicleSet[i];
    agents.push_back(make_agent(i, row, {8, 4}, 10.0,
                                i == 0 ? -1 : i - 1,
                                i == 0 ? std::vector<int>{0}
                                       : std::vector<int>{i - 1, i}));
    x.push_back({row.d0, row.v0});
  }
  GameConfig cfg = basic_config(4);
  const auto ref = ReferenceProfile::constant(0.5);
  Snapshot snap = make_snapshot(agents, x, 80.0);
  std::vector<BargainState> states;
  for (int i = 0; i < 4; ++i)
    states.push_back(init_bargain(agents[i], x[i], 80.0));

  const auto round = bargaining_round(agents, states, snap, cfg, ref);
  double surplus = 0.0;
  for (int i = 0; i < 4; ++i) surplus += states[i].beta - states[i].psi_last;
  CHECK(surplus >= 0.0);
  for (int i = 0; i < 4; ++i) CHECK(states[i].beta >= states[i].psi_last);
}

TEST_CASE("non-cooperation reports the disagreement value", "[bargaining]") {
  auto a = make_agent(0, oracle::kSevenVehicleSet[0], {4, 2}, 5.0, -1, {0});
  GameConfig cfg = basic_config(1);
  cfg.mu = 1.0;
  const auto ref = ReferenceProfile::constant(1.0);
  const VehicleState x{0.0, 0.0};
  Snapshot snap = make_snapshot({a}, {x}, 0.0);
  std::vector<BargainState> states{init_bargain(a, x, 0.0)};

  const auto round = bargaining_round({a}, states, snap, cfg, ref);
  CHECK_FALSE(round.outcome.cooperation_mask[0]);
  CHECK(round.outcome.xi[0] == Catch::Approx(states[0].beta));
}

TEST_CASE("synchronization error definition", "[bargaining]") {
  ReferenceProfile ref = ReferenceProfile::constant(3.0);

  Topology pair;
  pair.n_agents = 2;
  pair.edges = {{0, 1}};
  pair.leader = -1;  // no reference term
  CHECK(sync_error({2.0, 2.5}, pair, ref, 0) == Catch::Approx(0.5));

  Topology led = pair;
  led.leader = 0;
  CHECK(sync_error({3.0, 2.0}, led, ref, 0) == Catch::Approx(1.0));
  CHECK(sync_error({3.0, 3.0}, led, ref, 0) == Catch::Approx(0.0));
}

TEST_CASE("topology parsing and validation", "[bargaining]") {
  const auto topo = parse_topology_lines(
      {"# chain", "agent 0", "agent 1", "agent 2", "agent 3", "edge 0 1",
       "edge 1 2", "edge 2 3", "leader 0"},
      "inline");
  CHECK(topo.n_agents == 4);
  CHECK(topo.leader == 0);
  CHECK(topo.has_edge(0, 1));
  CHECK_FALSE(topo.has_edge(1, 0));
  CHECK(topo.in_neighbors(2) == std::vector<int>{1});
  CHECK(topo.in_neighbors(0).empty());

  // Disconnected follower.
  CHECK_THROWS_AS(
      parse_topology_lines({"agent 0", "agent 1", "leader 0"}, "inline"),
      ConfigError);
  // Leader must not hear from followers.
  CHECK_THROWS_AS(parse_topology_lines(
                      {"edge 0 1", "edge 1 0", "leader 0"}, "inline"),
                  ConfigError);
  // Self-loops are rejected.
  CHECK_THROWS_AS(
      parse_topology_lines({"edge 0 0", "edge 0 1", "leader 0"}, "inline"),
      ConfigError);

  const auto chain = chain_topology(7);
  CHECK(chain.n_agents == 7);
  CHECK(chain.edges.size() == 6);
}
