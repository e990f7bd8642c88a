from .campaign import Campaign, CampaignContext, CampaignOutcome, LieSpec, run_elicitation
from .client import EndpointConfig, EndpointError, ExchangeLog, ResponseSchemaError, chat_complete
from .parsing import (ParseError, ProbabilityParse, format_probability_response,
                      parse_decision_response, parse_probability_response)
from .prompts import (FAMILIES, STANDARD_TEMPLATES, Phrasebook, PromptTemplate, describe_context,
                      render_prompt)
