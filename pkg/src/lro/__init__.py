"""LLM-enhanced relational operators: an engine for semantic select /
match / impute / cluster / order over in-memory relations, a SQL-like plan
dialect composing them with classical operators, and an evaluation harness
measuring result quality and dollar cost."""

from .errors import (
    BackendError,
    ContextOverflowError,
    GatewayTimeout,
    GranularityError,
    LroError,
    MalformedOutputError,
    ParseError,
    SchemaError,
    UsageError,
    VariantError,
)
from .relation import (
    Database,
    Granularity,
    Relation,
    apply_permutation,
    extract_elements,
    filter_by_mask,
    group_rows,
    load_relation,
    project,
    take,
)
from .gateway import (
    BackendConfig,
    ChatRequest,
    ChatResponse,
    Gateway,
    HttpBackend,
    MockBackend,
    MockScript,
    UsageLedger,
    cost,
)
from .operators import (
    ALL,
    ONE,
    PAIR,
    SCORE,
    SEMI,
    SORT,
    ClusterResult,
    LroEngine,
    LroKind,
    MatchResult,
    Requirement,
    Variant,
    best_practice_variant,
    lro_cluster,
    lro_impute,
    lro_match,
    lro_order,
    lro_select,
    materialize_join,
)
from .prompts import PromptBuilder, PromptOptions, build_prompt
from .metrics import (
    RankingTruth,
    SetMetrics,
    ari,
    exact_match_ratio,
    hit_rate_at_k,
    kendall_tau_on_hits,
    llm_judge_score,
    nmi,
    prf,
    table_exact_match,
)
from .plan import Plan, execute, parse_plan, render_plan

__version__ = "0.1.0"
