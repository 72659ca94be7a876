from pydantic import BaseModel


class BpfKvStats(BaseModel):
    gets: int = 0
    ranges: int = 0
    range_pages: int = 0
    pushdowns: int = 0
    mismatches: int = 0
    fallbacks: int = 0
